#include "pudding/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "pudding/error.hpp"

namespace pudding {

namespace {

constexpr float kRmsEps = 1e-5f;

bool all_finite(const Matf& m) { return m.allFinite(); }
bool all_finite(const Vecf& v) { return v.allFinite(); }

RowVecf rms_row(const RowVecf& x, const Vecf& scale) {
  const float ms = x.squaredNorm() / static_cast<float>(x.size());
  const float inv = 1.0f / std::sqrt(ms + kRmsEps);
  return (x.array() * inv * scale.transpose().array()).matrix();
}

RowVecf project_row(const RowVecf& x, const Matf& w) { return x * w; }

RowVecf silu(const RowVecf& x) {
  return (x.array() / (1.0f + (-x.array()).exp())).matrix();
}

void apply_rope_row(RowVecf& x, int pos, int n_heads) {
  const int head_dim = static_cast<int>(x.size()) / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * head_dim;
    for (int p = 0; p < head_dim / 2; ++p) {
      const float freq = std::pow(10000.0f, -2.0f * static_cast<float>(p) / static_cast<float>(head_dim));
      const float angle = static_cast<float>(pos) * freq;
      const float c = std::cos(angle);
      const float s = std::sin(angle);
      const float a = x[off + 2 * p];
      const float b = x[off + 2 * p + 1];
      x[off + 2 * p] = a * c - b * s;
      x[off + 2 * p + 1] = a * s + b * c;
    }
  }
}

// Causal attention for one query row against the first `used` key/value rows.
RowVecf attend_row(const RowVecf& q, const Matf& k_rows, const Matf& v_rows, int used,
                   int n_heads) {
  const int d_model = static_cast<int>(q.size());
  const int head_dim = d_model / n_heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
  RowVecf ctx = RowVecf::Zero(d_model);
  Vecf scores(used);
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * head_dim;
    const auto qh = q.segment(off, head_dim);
    float max_score = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < used; ++j) {
      const float s = qh.dot(k_rows.row(j).segment(off, head_dim)) * inv_sqrt;
      scores[j] = s;
      max_score = std::max(max_score, s);
    }
    float denom = 0.0f;
    for (int j = 0; j < used; ++j) {
      scores[j] = std::exp(scores[j] - max_score);
      denom += scores[j];
    }
    const float inv_denom = 1.0f / denom;
    auto ch = ctx.segment(off, head_dim);
    for (int j = 0; j < used; ++j) {
      ch += (scores[j] * inv_denom) * v_rows.row(j).segment(off, head_dim);
    }
  }
  return ctx;
}

RowVecf embed_row(const TransformerModel& model, TokenId token, int pos) {
  RowVecf x = model.token_embedding.row(token);
  if (model.config.positional == PositionalKind::Learned) {
    x += model.pos_embedding.row(pos);
  }
  return x;
}

RowVecf log_softmax_row(const RowVecf& logits) {
  const float m = logits.maxCoeff();
  double sum = 0.0;
  for (int j = 0; j < logits.size(); ++j) {
    sum += std::exp(static_cast<double>(logits[j]) - static_cast<double>(m));
  }
  const double lse = static_cast<double>(m) + std::log(sum);
  RowVecf out(logits.size());
  for (int j = 0; j < logits.size(); ++j) {
    out[j] = static_cast<float>(static_cast<double>(logits[j]) - lse);
  }
  return out;
}

RowVecf logits_row(const TransformerModel& model, const RowVecf& x) {
  return project_row(rms_row(x, model.final_norm), model.output_head);
}

// One residual block applied to position `pos`; k_rows/v_rows hold this
// block's keys and values for positions 0..pos-1 on entry, 0..pos on exit.
void block_step(const TransformerBlock& block, const ModelConfig& config, RowVecf& x, int pos,
                Matf& k_rows, Matf& v_rows) {
  const RowVecf xn = rms_row(x, block.norm_attn);
  RowVecf q = project_row(xn, block.wq);
  RowVecf k = project_row(xn, block.wk);
  const RowVecf v = project_row(xn, block.wv);
  if (config.positional == PositionalKind::Rotary) {
    apply_rope_row(q, pos, config.n_heads);
    apply_rope_row(k, pos, config.n_heads);
  }
  k_rows.row(pos) = k;
  v_rows.row(pos) = v;
  const RowVecf ctx = attend_row(q, k_rows, v_rows, pos + 1, config.n_heads);
  x += project_row(ctx, block.wo);
  const RowVecf hn = rms_row(x, block.norm_ffn);
  x += project_row(silu(project_row(hn, block.w_up)), block.w_down);
}

void check_tokens(const TransformerModel& model, const TokenSequence& z) {
  require(!z.empty(), ErrorKind::Config, "token sequence must be non-empty");
  for (TokenId t : z.tokens) {
    if (t < 0 || t >= model.config.vocab_size) {
      fail(ErrorKind::Vocabulary,
           "token id " + std::to_string(t) + " outside vocabulary of size " +
               std::to_string(model.config.vocab_size));
    }
  }
  if (model.config.positional == PositionalKind::Learned &&
      z.length() > model.config.max_positions) {
    fail(ErrorKind::SequenceTooLong,
         "sequence length " + std::to_string(z.length()) + " exceeds positional table of " +
             std::to_string(model.config.max_positions));
  }
}

int argmax_lowest(const RowVecf& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

bool OmissionSet::contains(BlockIndex b) const {
  return std::binary_search(indices.begin(), indices.end(), b);
}

OmissionSet make_omission_set(std::vector<BlockIndex> indices) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  return OmissionSet{std::move(indices)};
}

void validate(const TransformerModel& model) {
  const auto& c = model.config;
  require(c.vocab_size > 0 && c.d_model > 0 && c.d_ff > 0 && c.n_blocks > 0 && c.n_heads > 0,
          ErrorKind::Config, "model dimensions must be positive");
  require(c.d_ff >= c.d_model, ErrorKind::Config, "d_ff must be >= d_model");
  require(c.d_model % c.n_heads == 0, ErrorKind::Config, "n_heads must divide d_model");
  require(model.n_blocks() == c.n_blocks, ErrorKind::ShapeMismatch,
          "n_blocks does not match block count");
  require(model.token_embedding.rows() == c.vocab_size && model.token_embedding.cols() == c.d_model,
          ErrorKind::ShapeMismatch, "token_embedding shape mismatch");
  require(model.output_head.rows() == c.d_model && model.output_head.cols() == c.vocab_size,
          ErrorKind::ShapeMismatch, "output_head shape mismatch");
  require(model.final_norm.size() == c.d_model, ErrorKind::ShapeMismatch,
          "final_norm shape mismatch");
  if (c.positional == PositionalKind::Learned) {
    require(c.max_positions > 0, ErrorKind::Config, "max_positions must be positive");
    require(model.pos_embedding.rows() == c.max_positions && model.pos_embedding.cols() == c.d_model,
            ErrorKind::ShapeMismatch, "pos_embedding shape mismatch");
    require(all_finite(model.pos_embedding), ErrorKind::Config, "pos_embedding must be finite");
  }
  require(all_finite(model.token_embedding) && all_finite(model.output_head) &&
              all_finite(model.final_norm),
          ErrorKind::Config, "model weights must be finite");
  std::set<BlockIndex> seen;
  for (const auto& b : model.blocks) {
    require(b.block_index >= 1 && b.block_index <= c.n_blocks, ErrorKind::Config,
            "block_index out of range");
    require(seen.insert(b.block_index).second, ErrorKind::Config, "duplicate block_index");
    require(b.wq.rows() == c.d_model && b.wq.cols() == c.d_model, ErrorKind::ShapeMismatch, "wq");
    require(b.wk.rows() == c.d_model && b.wk.cols() == c.d_model, ErrorKind::ShapeMismatch, "wk");
    require(b.wv.rows() == c.d_model && b.wv.cols() == c.d_model, ErrorKind::ShapeMismatch, "wv");
    require(b.wo.rows() == c.d_model && b.wo.cols() == c.d_model, ErrorKind::ShapeMismatch, "wo");
    require(b.w_up.rows() == c.d_model && b.w_up.cols() == c.d_ff, ErrorKind::ShapeMismatch, "w_up");
    require(b.w_down.rows() == c.d_ff && b.w_down.cols() == c.d_model, ErrorKind::ShapeMismatch,
            "w_down");
    require(b.norm_attn.size() == c.d_model && b.norm_ffn.size() == c.d_model,
            ErrorKind::ShapeMismatch, "block norm shape mismatch");
    require(all_finite(b.wq) && all_finite(b.wk) && all_finite(b.wv) && all_finite(b.wo) &&
                all_finite(b.w_up) && all_finite(b.w_down) && all_finite(b.norm_attn) &&
                all_finite(b.norm_ffn),
            ErrorKind::Config, "block weights must be finite");
  }
}

PrunedView::PrunedView(const TransformerModel& model, std::vector<int> surviving)
    : model_(&model), surviving_(std::move(surviving)) {}

std::vector<BlockIndex> PrunedView::surviving_indices() const {
  std::vector<BlockIndex> out;
  out.reserve(surviving_.size());
  for (int offset : surviving_) out.push_back(model_->blocks[static_cast<std::size_t>(offset)].block_index);
  return out;
}

PrunedView apply_omission(const TransformerModel& model, const OmissionSet& b) {
  const int d = model.n_blocks();
  for (BlockIndex idx : b.indices) {
    if (idx < 1 || idx > d) {
      fail(ErrorKind::InvalidOmission,
           "omission index " + std::to_string(idx) + " outside 1.." + std::to_string(d));
    }
  }
  require(b.size() < d, ErrorKind::EmptyModel, "omission set would remove every block");
  std::vector<int> surviving;
  surviving.reserve(static_cast<std::size_t>(d - b.size()));
  for (int i = 0; i < d; ++i) {
    if (!b.contains(model.blocks[static_cast<std::size_t>(i)].block_index)) surviving.push_back(i);
  }
  return PrunedView(model, std::move(surviving));
}

LogProbTable forward_logprobs(const PrunedView& view, const TokenSequence& z) {
  const TransformerModel& model = view.model();
  check_tokens(model, z);
  const int T = z.length();
  const int d_model = model.config.d_model;

  Matf x(T, d_model);
  for (int i = 0; i < T; ++i) {
    x.row(i) = embed_row(model, z.tokens[static_cast<std::size_t>(i)], i);
  }

  Matf k_rows(T, d_model);
  Matf v_rows(T, d_model);
  for (int bi = 0; bi < view.n_surviving(); ++bi) {
    const TransformerBlock& block = view.block(bi);
    for (int i = 0; i < T; ++i) {
      RowVecf row = x.row(i);
      block_step(block, model.config, row, i, k_rows, v_rows);
      x.row(i) = row;
    }
  }

  LogProbTable table(T, model.config.vocab_size);
  for (int i = 0; i < T; ++i) {
    const RowVecf row = x.row(i);
    table.row(i) = log_softmax_row(logits_row(model, row));
  }
  return table;
}

DecodeSession::DecodeSession(const PrunedView& view) : view_(&view) {
  k_cache_.resize(static_cast<std::size_t>(view.n_surviving()));
  v_cache_.resize(static_cast<std::size_t>(view.n_surviving()));
}

RowVecf DecodeSession::feed(TokenId token) {
  const TransformerModel& model = view_->model();
  TokenSequence one{{token}};
  check_tokens(model, one);
  if (model.config.positional == PositionalKind::Learned &&
      n_tokens_ >= model.config.max_positions) {
    fail(ErrorKind::SequenceTooLong, "decode position exceeds positional table");
  }
  const int pos = n_tokens_;
  const int d_model = model.config.d_model;
  RowVecf x = embed_row(model, token, pos);
  for (int bi = 0; bi < view_->n_surviving(); ++bi) {
    Matf& k_rows = k_cache_[static_cast<std::size_t>(bi)];
    Matf& v_rows = v_cache_[static_cast<std::size_t>(bi)];
    if (k_rows.rows() <= pos) {
      const int grown = std::max(16, 2 * static_cast<int>(k_rows.rows()));
      k_rows.conservativeResize(grown, d_model);
      v_rows.conservativeResize(grown, d_model);
    }
    block_step(view_->block(bi), model.config, x, pos, k_rows, v_rows);
  }
  ++n_tokens_;
  return log_softmax_row(logits_row(model, x));
}

RowVecf DecodeSession::prefill(const TokenSequence& prompt) {
  require(!prompt.empty(), ErrorKind::Config, "prompt must be non-empty");
  RowVecf row;
  for (TokenId t : prompt.tokens) row = feed(t);
  return row;
}

RowVecf DecodeSession::append(TokenId token) { return feed(token); }

TokenSequence greedy_decode(const PrunedView& view, const TokenSequence& prompt, int max_new,
                            bool use_cache) {
  require(max_new >= 0, ErrorKind::Config, "max_new must be >= 0");
  TokenSequence out = prompt;
  if (max_new == 0) return out;
  if (use_cache) {
    DecodeSession session(view);
    RowVecf row = session.prefill(prompt);
    for (int step = 0; step < max_new; ++step) {
      const TokenId next = argmax_lowest(row);
      out.tokens.push_back(next);
      if (step + 1 < max_new) row = session.append(next);
    }
  } else {
    for (int step = 0; step < max_new; ++step) {
      const LogProbTable table = forward_logprobs(view, out);
      const RowVecf row = table.row(table.rows() - 1);
      out.tokens.push_back(argmax_lowest(row));
    }
  }
  return out;
}

}  // namespace pudding
