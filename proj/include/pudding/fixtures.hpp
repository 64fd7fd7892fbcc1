#pragma once

#include <cstdint>
#include <vector>

#include "pudding/losses.hpp"
#include "pudding/model.hpp"
#include "pudding/search.hpp"
#include "pudding/types.hpp"

namespace pudding {

/// Fully random small model: weights ~ N(0, scale²), norm scales one,
/// learned positions (small random). Deterministic for a fixed seed.
TransformerModel random_model(const ModelConfig& config, std::uint64_t seed,
                              float scale = 0.1f);

/// Random token sequences with a random prompt/answer split and optional
/// random wrong answers (each the answer's length).
std::vector<PromptAnswerPair> random_pairs(int count, int vocab_size, int min_len, int max_len,
                                           int n_wrong, std::uint64_t seed);

/// Hand-constructed model whose best omission set provably depends on the
/// prompt's task:
///  - token 0..n_tasks-1: task triggers (always the first prompt token);
///    token 3+τ: task τ's answer; tokens 6..15: fillers.
///  - Block 1 attends uniformly, broadcasting the trigger's task flag to a
///    per-task "flag" channel and writing the positive answer signal; removing
///    it silences the answer logits entirely.
///  - Each task owns dedicated "damage" blocks whose feed-forward path reads
///    the task's flag channel and subtracts from the task's answer channel;
///    they only fire when that task's trigger is present.
/// Omitting exactly task τ's damage blocks is therefore the unique size-k
/// optimum for task-τ prompts, and the optima differ across tasks.
struct PlantedSpec {
  int n_tasks = 3;   // 1..3 (vocabulary layout fixes three trigger slots)
  int n_blocks = 7;  // block 1 broadcaster, 2..n_blocks damage or inert
  std::vector<std::vector<BlockIndex>> damage_blocks;  // per task; default pairs
  int pairs_per_task = 16;
  int heldout_per_task = 8;
  int min_prompt_len = 5;
  int max_prompt_len = 8;
  std::uint64_t seed = 1234;
  // Circuit magnitudes (see fixtures.cpp for how they interact).
  float flag = 4.0f;
  float broadcast_w = 1.5f;
  float answer_w = 1.5f;
  float damage_up = 1.0f;
  float damage_down = 0.32f;
  float head_w = 4.0f;
  float filler_amp = 0.5f;
};

struct PlantedFixture {
  TransformerModel model;
  PlantedSpec spec;
  int k = 2;                              // cardinality of the planted optima
  std::vector<OmissionSet> optimal_sets;  // per task
  std::vector<CalibrationDataset> calibration;  // one per task: task0, task1, …
  std::vector<CalibrationDataset> heldout;

  std::vector<PromptAnswerPair> all_calibration() const;
  std::vector<PromptAnswerPair> all_heldout() const;
};

PlantedFixture make_planted_fixture(PlantedSpec spec = {});

}  // namespace pudding
