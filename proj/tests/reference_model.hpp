#pragma once

// Independent double-precision reference for the decoder forward pass, written
// against the documented semantics only: plain nested loops over std::vector,
// no Eigen, no shared helpers with the production code. Used as the oracle the
// optimized forward must agree with.

#include <cmath>
#include <cstddef>
#include <vector>

#include "pudding/model.hpp"
#include "pudding/types.hpp"

namespace ref {

using Row = std::vector<double>;
using Table = std::vector<Row>;

inline Row rms_norm(const Row& x, const pudding::Vecf& scale) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + 1e-5);
  Row out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * inv * static_cast<double>(scale[static_cast<int>(i)]);
  }
  return out;
}

inline Row matmul(const Row& x, const pudding::Matf& w) {
  Row out(static_cast<std::size_t>(w.cols()), 0.0);
  for (int j = 0; j < w.cols(); ++j) {
    double acc = 0.0;
    for (int i = 0; i < w.rows(); ++i) {
      acc += x[static_cast<std::size_t>(i)] * static_cast<double>(w(i, j));
    }
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

inline void rope(Row& x, int pos, int n_heads) {
  const int head_dim = static_cast<int>(x.size()) / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    for (int p = 0; p < head_dim / 2; ++p) {
      const double freq = std::pow(10000.0, -2.0 * p / static_cast<double>(head_dim));
      const double angle = pos * freq;
      const double a = x[static_cast<std::size_t>(h * head_dim + 2 * p)];
      const double b = x[static_cast<std::size_t>(h * head_dim + 2 * p + 1)];
      x[static_cast<std::size_t>(h * head_dim + 2 * p)] = a * std::cos(angle) - b * std::sin(angle);
      x[static_cast<std::size_t>(h * head_dim + 2 * p + 1)] =
          a * std::sin(angle) + b * std::cos(angle);
    }
  }
}

// Full-sequence causal multi-head attention for one block.
inline Table attention(const Table& q, const Table& k, const Table& v, int n_heads) {
  const std::size_t T = q.size();
  const int d_model = static_cast<int>(q[0].size());
  const int head_dim = d_model / n_heads;
  Table out(T, Row(static_cast<std::size_t>(d_model), 0.0));
  for (std::size_t i = 0; i < T; ++i) {
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * head_dim;
      std::vector<double> scores(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (int c = 0; c < head_dim; ++c) {
          dot += q[i][static_cast<std::size_t>(off + c)] * k[j][static_cast<std::size_t>(off + c)];
        }
        scores[j] = dot / std::sqrt(static_cast<double>(head_dim));
        if (scores[j] > mx) mx = scores[j];
      }
      double denom = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        denom += scores[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double w = scores[j] / denom;
        for (int c = 0; c < head_dim; ++c) {
          out[i][static_cast<std::size_t>(off + c)] += w * v[j][static_cast<std::size_t>(off + c)];
        }
      }
    }
  }
  return out;
}

// Log-probability table for `tokens` under the model with the given blocks
// omitted (1-based indices; unsorted and duplicated entries tolerated).
inline Table forward_logprobs(const pudding::TransformerModel& model,
                              const std::vector<pudding::BlockIndex>& omitted,
                              const std::vector<pudding::TokenId>& tokens) {
  const auto& cfg = model.config;
  const std::size_t T = tokens.size();
  Table x(T, Row(static_cast<std::size_t>(cfg.d_model)));
  for (std::size_t i = 0; i < T; ++i) {
    for (int c = 0; c < cfg.d_model; ++c) {
      double e = static_cast<double>(model.token_embedding(tokens[i], c));
      if (cfg.positional == pudding::PositionalKind::Learned) {
        e += static_cast<double>(model.pos_embedding(static_cast<int>(i), c));
      }
      x[i][static_cast<std::size_t>(c)] = e;
    }
  }

  for (const auto& block : model.blocks) {
    bool skip = false;
    for (pudding::BlockIndex b : omitted) skip = skip || (b == block.block_index);
    if (skip) continue;

    Table q(T), k(T), v(T);
    for (std::size_t i = 0; i < T; ++i) {
      const Row xn = rms_norm(x[i], block.norm_attn);
      q[i] = matmul(xn, block.wq);
      k[i] = matmul(xn, block.wk);
      v[i] = matmul(xn, block.wv);
      if (cfg.positional == pudding::PositionalKind::Rotary) {
        rope(q[i], static_cast<int>(i), cfg.n_heads);
        rope(k[i], static_cast<int>(i), cfg.n_heads);
      }
    }
    const Table ctx = attention(q, k, v, cfg.n_heads);
    for (std::size_t i = 0; i < T; ++i) {
      const Row attn_out = matmul(ctx[i], block.wo);
      for (std::size_t c = 0; c < x[i].size(); ++c) x[i][c] += attn_out[c];
      const Row hn = rms_norm(x[i], block.norm_ffn);
      Row up = matmul(hn, block.w_up);
      for (double& u : up) u = u / (1.0 + std::exp(-u));
      const Row down = matmul(up, block.w_down);
      for (std::size_t c = 0; c < x[i].size(); ++c) x[i][c] += down[c];
    }
  }

  Table table(T);
  for (std::size_t i = 0; i < T; ++i) {
    const Row logits = matmul(rms_norm(x[i], model.final_norm), model.output_head);
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    table[i].resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) table[i][j] = logits[j] - lse;
  }
  return table;
}

}  // namespace ref
