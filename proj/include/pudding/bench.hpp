#pragma once

#include <string>
#include <vector>

#include "pudding/losses.hpp"
#include "pudding/model.hpp"
#include "pudding/pipeline.hpp"
#include "pudding/router.hpp"
#include "pudding/search.hpp"
#include "pudding/types.hpp"

namespace pudding {

/// Per-task block pruning rates: rates(t, j) is the fraction of task-t
/// prompts whose routed omission set contains block j+1. Each row sums to k.
struct HeatmapTable {
  std::vector<std::string> tasks;
  Matd rates;  // [n_tasks × d]
  int k = 0;
  std::vector<std::string> warnings;  // e.g. tasks skipped for being empty
};

HeatmapTable compute_heatmap(const RouterModel& router, const CandidatePool& pool,
                             const std::vector<CalibrationDataset>& task_datasets,
                             int n_blocks);

/// Mean loss per task for one selection method, plus the pair-weighted
/// average over every evaluation pair.
struct ComparisonRow {
  std::string method;
  std::vector<double> per_task;
  double average = 0.0;
};

struct ComparisonTable {
  std::vector<std::string> task_names;
  std::vector<ComparisonRow> rows;  // fixed order: see compare_methods
  std::string eval_set_hash;        // fingerprint of the shared evaluation pairs
};

/// Evaluates five selection methods on identical pairs, in this fixed order:
/// dense, static-global (the pool's first entry), static-per-task (the best
/// pool entry for each task), per-prompt-greedy (prompt-only greedy search,
/// perplexity criterion), router. The average column is the mean over all
/// pairs pooled across tasks.
ComparisonTable compare_methods(const TransformerModel& model, const CandidatePool& pool,
                                const RouterModel& router,
                                const std::vector<CalibrationDataset>& task_datasets,
                                Criterion criterion = Criterion::Tl, int threads = 1);

struct AblationRow {
  int pool_size = 0;
  double routed_mean_loss = 0.0;  // true loss of the routed choice, averaged
  double oracle_mean_loss = 0.0;  // average of per-sample label minima
  double accuracy = 0.0;          // routed choice == label argmin
};

/// Truncates the (dataset × criterion) pool to its first `size` entries per
/// requested size, retrains the router, and reports the routed mean loss on
/// all pairs. A size-1 pool reduces to the static-global baseline exactly.
std::vector<AblationRow> ablate_pool_size(const TransformerModel& model,
                                          const std::vector<CalibrationDataset>& datasets,
                                          const std::vector<Criterion>& criteria,
                                          const std::vector<int>& sizes, int k,
                                          const RouterConfig& arch, const TrainConfig& tconfig,
                                          LossMode mode = LossMode::Mse,
                                          Criterion eval_criterion = Criterion::Tl,
                                          int threads = 1);

/// Fraction of pairs whose correct answer attains the lowest task likelihood
/// among {correct, wrong answers}; ties favor the correct answer. Every pair
/// must carry at least one wrong answer.
double multiple_choice_accuracy(const PrunedView& view,
                                const std::vector<PromptAnswerPair>& pairs, int threads = 1);

struct BenchResults {
  bool has_heatmap = false;
  HeatmapTable heatmap;
  bool has_comparison = false;
  ComparisonTable comparison;
  std::vector<AblationRow> ablation;
  std::vector<SpeedupCell> speedup;
};

/// Writes CSV (and a gnuplot-compatible matrix for the heatmap) plus one
/// combined JSON file into out_dir. Deterministic ordering and formatting;
/// identical inputs produce byte-identical files. Returns the paths written.
std::vector<std::string> emit_reports(const BenchResults& results, const std::string& out_dir);

}  // namespace pudding
