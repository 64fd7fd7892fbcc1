#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pudding/losses.hpp"
#include "pudding/model.hpp"
#include "pudding/types.hpp"

namespace pudding {

/// A named calibration corpus used to score candidate omission sets.
struct CalibrationDataset {
  std::string name;
  std::vector<PromptAnswerPair> pairs;
};

/// One greedy step: every candidate block considered, its dataset loss, and
/// the winner. `candidate_blocks[i]` pairs with `candidate_losses[i]`.
struct GreedyStep {
  std::vector<BlockIndex> candidate_blocks;
  std::vector<double> candidate_losses;
  BlockIndex chosen_block = 0;
  double chosen_loss = 0.0;
};

struct GreedyResult {
  OmissionSet set;
  std::vector<GreedyStep> trace;
  double final_loss = 0.0;
};

struct SearchOptions {
  int threads = 1;
  /// When true, a single refinement sweep follows the greedy build: each
  /// chosen block may be swapped for an unchosen one if that strictly lowers
  /// the dataset loss. Off by default.
  bool two_pass = false;
};

/// Sequentially picks k blocks to omit, each step taking the block whose
/// removal (together with the blocks already chosen) minimizes the dataset
/// loss. Ties go to the lowest block index. k = 0 yields an empty set and an
/// empty trace.
GreedyResult greedy_search(const TransformerModel& model, const CalibrationDataset& data,
                           Criterion criterion, int k, const SearchOptions& options = {});

/// Global argmin over all size-k subsets; ties resolved to the
/// lexicographically smallest subset. Refuses to enumerate more than
/// `max_subsets` candidates.
OmissionSet exhaustive_search(const TransformerModel& model, const CalibrationDataset& data,
                              Criterion criterion, int k, std::int64_t max_subsets = 10000,
                              int threads = 1);

/// Greedy search on a single prompt-answer pair (the per-prompt baseline).
GreedyResult per_prompt_search(const TransformerModel& model, const PromptAnswerPair& pair,
                               Criterion criterion, int k, const SearchOptions& options = {});

/// One candidate omission set with the provenance of the greedy run that
/// produced it.
struct PoolEntry {
  OmissionSet set;
  std::string dataset;
  Criterion criterion = Criterion::Tl;
  double loss = 0.0;
};

/// Ordered family of m candidate omission sets, dataset-major and
/// criterion-minor. Duplicate sets from different (dataset, criterion) pairs
/// are retained so positions 1..m stay aligned with router labels.
struct CandidatePool {
  int k = 0;
  std::string model_hash;
  std::vector<PoolEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
};

/// Runs greedy_search for every (dataset, criterion) pair and records
/// provenance. Pool order is datasets-major, criteria-minor.
CandidatePool generate_pool(const TransformerModel& model,
                            const std::vector<CalibrationDataset>& datasets,
                            const std::vector<Criterion>& criteria, int k,
                            const SearchOptions& options = {});

/// Canonical JSON form: {"k", "model_hash", "sets": [{"blocks", "dataset",
/// "criterion", "loss"}]} with 1-based block indices. Byte-stable for
/// identical pools.
std::string serialize_pool(const CandidatePool& pool);
CandidatePool deserialize_pool(const std::string& text);
void save_pool(const CandidatePool& pool, const std::string& path);
CandidatePool load_pool(const std::string& path);

/// Fingerprint of the canonical serialization; routers bind to this.
std::uint64_t pool_hash(const CandidatePool& pool);

}  // namespace pudding
