#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pudding/model.hpp"
#include "pudding/router.hpp"
#include "pudding/search.hpp"
#include "pudding/types.hpp"

namespace pudding {

/// Lazily loads transformer blocks from a PUDW weight file. Non-block weights
/// (embeddings, head, final norm, positions) are read once at construction and
/// stay pinned. Blocks named in the active omission set are evicted before any
/// new block is read, so residency never exceeds the configured cap.
class BlockStore {
 public:
  /// max_resident < 0 disables the residency cap; otherwise at most
  /// max_resident transformer blocks may be resident at any instant.
  explicit BlockStore(const std::string& path, int max_resident = -1);

  const ModelConfig& config() const { return model_.config; }
  const std::string& path() const { return path_; }

  /// On-disk byte size of one transformer block (identical across blocks).
  std::uint64_t block_bytes() const { return block_bytes_; }

  /// Makes exactly the complement of `omission` resident: evicts resident
  /// blocks named by `omission`, then reads the missing survivors in
  /// ascending order. Returns the bytes read by this call.
  std::uint64_t ensure_loaded(const OmissionSet& omission);

  /// Sorted 1-based indices of the currently resident blocks.
  std::vector<BlockIndex> loaded_blocks() const;
  bool is_loaded(BlockIndex b) const;

  std::uint64_t bytes_transferred_total() const { return bytes_transferred_total_; }
  int peak_resident() const { return peak_resident_; }

  /// View over the survivors of `omission`; every survivor must be resident
  /// (call ensure_loaded first). Valid until the next ensure_loaded.
  PrunedView surviving_view(const OmissionSet& omission) const;

  /// The partially-loaded model backing the views (evicted blocks are empty).
  const TransformerModel& model() const { return model_; }

 private:
  void load_block(BlockIndex b);
  void evict_block(BlockIndex b);
  std::uint64_t block_offset(BlockIndex b) const;

  std::string path_;
  mutable std::ifstream file_;
  TransformerModel model_;
  std::vector<bool> resident_;  // slot i ↔ block i+1
  int max_resident_ = -1;
  int n_resident_ = 0;
  int peak_resident_ = 0;
  std::uint64_t block_bytes_ = 0;
  std::uint64_t bytes_transferred_total_ = 0;
};

/// Stage timings (milliseconds, monotonic clock) and transfer accounting for
/// one routed inference.
struct InferenceReport {
  int routed_index = 0;  // 0-based position in the pool
  OmissionSet omission_set;
  double router_time_ms = 0.0;
  double load_time_ms = 0.0;
  std::uint64_t bytes_loaded = 0;
  double prefill_time_ms = 0.0;  // time to first generated token
  double generation_time_ms = 0.0;
  int tokens_generated = 0;
};

struct PipelineStats {
  std::uint64_t route_invocations = 0;
};

/// Routes once, reconciles residency, then greedy-decodes on the pruned view.
/// The produced tokens are bit-identical to greedy_decode on an eagerly
/// loaded view of the same omission set.
std::pair<TokenSequence, InferenceReport> run_inference(BlockStore& store,
                                                        const RouterModel& router,
                                                        const CandidatePool& pool,
                                                        const TokenSequence& prompt,
                                                        int max_new,
                                                        PipelineStats* stats = nullptr);

/// One JSON line per report. `include_timings = false` zeroes the four timing
/// fields so repeated runs serialize byte-identically.
std::string report_to_jsonl(const InferenceReport& report, const TokenSequence& output,
                            bool include_timings = true);

/// bytes × fraction ÷ bandwidth; the storage-transfer estimator behind the
/// loading-time tables.
double estimate_load_time(double model_bytes, double surviving_fraction,
                          double bandwidth_bytes_per_s);

/// Block vs non-block parameter split of a decoder stack, used to derive the
/// surviving-byte fraction after pruning k of n_blocks blocks.
struct ParameterAccounting {
  std::uint64_t block_params = 0;      // one transformer block
  std::uint64_t non_block_params = 0;  // embeddings + head + final norm
  int n_blocks = 0;

  std::uint64_t total() const {
    return non_block_params + static_cast<std::uint64_t>(n_blocks) * block_params;
  }
  double surviving_fraction(int k) const;
};

/// Parameter layout of the 8B-parameter Llama 3.1 decoder (32 blocks, grouped
/// query attention 32/8 heads, 4096 hidden, 14336 FFN, 128256 vocabulary,
/// untied output head).
ParameterAccounting llama31_8b_accounting();

struct SpeedupCell {
  int prompt_length = 0;
  int gen_length = 0;
  double dense_ms = 0.0;           // median decode wall time, all blocks
  double routed_ms = 0.0;          // median decode wall time, routed blocks
  double router_overhead_ms = 0.0; // median routing time, listed separately
  double ratio = 0.0;              // dense_ms / routed_ms
};

/// Medians over `repetitions` runs per (prompt, generation length) cell.
/// Residency is reconciled before timing starts, so cells measure compute.
std::vector<SpeedupCell> measure_speedup(BlockStore& dense_store, BlockStore& routed_store,
                                         const RouterModel& router, const CandidatePool& pool,
                                         const std::vector<TokenSequence>& workload,
                                         const std::vector<int>& gen_lengths,
                                         int repetitions = 5);

}  // namespace pudding
