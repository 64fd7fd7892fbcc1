#pragma once

#include <cstdint>
#include <vector>

#include "pudding/types.hpp"

namespace pudding {

enum class PositionalKind : std::uint32_t {
  Learned = 0,  // absolute table added to the embedding
  Rotary = 1,   // rotated query/key pairs, no table
};

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int d_ff = 0;
  int n_blocks = 0;
  int n_heads = 1;
  PositionalKind positional = PositionalKind::Learned;
  int max_positions = 512;  // learned-table rows; ignored for rotary
};

// Pre-norm residual block: x += attn(rms(x)); x += ffn(rms(x)).
// Weight orientation is input-major: a row activation multiplies from the
// left, y = x * W.
struct TransformerBlock {
  Matf wq, wk, wv, wo;      // each [d_model x d_model]
  Matf w_up;                // [d_model x d_ff]
  Matf w_down;              // [d_ff x d_model]
  Vecf norm_attn;           // pre-attention rms scale [d_model]
  Vecf norm_ffn;            // pre-ffn rms scale [d_model]
  BlockIndex block_index = 0;  // 1..d, unique within a model
};

struct TransformerModel {
  ModelConfig config;
  std::vector<TransformerBlock> blocks;
  Matf token_embedding;  // [vocab_size x d_model]
  Matf output_head;      // [d_model x vocab_size]
  Vecf final_norm;       // [d_model]
  Matf pos_embedding;    // [max_positions x d_model] when positional == Learned

  int n_blocks() const { return static_cast<int>(blocks.size()); }
};

// Shape, index and finiteness invariants; throws ErrorKind::ShapeMismatch /
// Config on violation.
void validate(const TransformerModel& model);

// Non-owning view over the d-|b| surviving blocks, original order preserved.
class PrunedView {
 public:
  PrunedView(const TransformerModel& model, std::vector<int> surviving);

  const TransformerModel& model() const { return *model_; }
  int n_surviving() const { return static_cast<int>(surviving_.size()); }
  const TransformerBlock& block(int i) const { return model_->blocks[static_cast<std::size_t>(surviving_[static_cast<std::size_t>(i)])]; }

  // 1-based indices of the surviving blocks, ascending.
  std::vector<BlockIndex> surviving_indices() const;

 private:
  const TransformerModel* model_;
  std::vector<int> surviving_;  // 0-based storage offsets, ascending
};

// Weights are shared, never copied. Errors: InvalidOmission for indices
// outside 1..d, EmptyModel when |b| == d.
PrunedView apply_omission(const TransformerModel& model, const OmissionSet& b);

// Row-major [T x vocab]; row i is the log-distribution of the next token
// after consuming tokens 0..i. Every row log-sum-exps to 0.
using LogProbTable = Matf;

LogProbTable forward_logprobs(const PrunedView& view, const TokenSequence& z);

// Incremental decoding state. Bit-equivalent to forward_logprobs: both paths
// evaluate each position with identical per-row arithmetic, so the cached and
// recomputed tables match exactly.
class DecodeSession {
 public:
  explicit DecodeSession(const PrunedView& view);

  // Feeds tokens and returns the log-prob row for the latest position.
  RowVecf prefill(const TokenSequence& prompt);
  RowVecf append(TokenId token);

  int position() const { return n_tokens_; }

 private:
  RowVecf feed(TokenId token);

  const PrunedView* view_;
  int n_tokens_ = 0;
  std::vector<Matf> k_cache_;  // per surviving block, [T x d_model]
  std::vector<Matf> v_cache_;
};

// Appends up to max_new argmax tokens; ties resolve to the lowest token id.
// use_cache=false recomputes the full forward each step (the slow reference
// path used to pin down cache equivalence).
TokenSequence greedy_decode(const PrunedView& view, const TokenSequence& prompt,
                            int max_new, bool use_cache = true);

}  // namespace pudding
