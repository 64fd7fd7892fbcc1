#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pudding/losses.hpp"
#include "pudding/model.hpp"
#include "pudding/search.hpp"
#include "pudding/types.hpp"

namespace pudding {

/// One router training datum: the prompt (answer discarded) and the true
/// per-omission-set losses it should learn to predict.
struct RouterSample {
  TokenSequence prompt_tokens;
  std::vector<double> label;  // length m, one loss per pool entry
};

/// Architecture of the prompt encoder: learned token embeddings, mean pooling
/// over positions, then `n_layers` tanh dense layers, then a linear head
/// emitting one predicted loss per pool entry.
struct RouterConfig {
  int vocab = 0;
  int embed_dim = 32;
  int n_layers = 1;  // 1 or 2 dense layers after pooling
  int m = 0;         // output dimension = bound pool size
  int max_prompt_tokens = 512;  // prompts are head-truncated to this length
};

/// Training hyperparameters for the router head + encoder.
struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int batch_size = 32;
  int epochs = 10;
  int warmup_steps = 500;
  std::uint64_t seed = 0;
};

enum class LossMode { Mse, Ce, CeOnehot };
const char* to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& s);

/// All router parameters in double precision (checkpoints store 32-bit).
struct RouterModel {
  RouterConfig config;
  Matd embedding;             // [vocab × e]
  std::vector<Matd> layer_w;  // n_layers of [e × e]
  std::vector<Vecd> layer_b;  // n_layers of [e]
  Matd head_w;                // [e × m]
  Vecd head_b;                // [m]
  std::uint64_t pool_binding = 0;  // pool_hash of the pool this predicts over
  double final_train_loss = 0.0;
};

/// Gradient (or moment) buffers shaped exactly like the model parameters.
struct RouterTensors {
  Matd embedding;
  std::vector<Matd> layer_w;
  std::vector<Vecd> layer_b;
  Matd head_w;
  Vecd head_b;
};

RouterModel init_router(const RouterConfig& config, std::uint64_t seed);

/// Predicted loss vector ŝ for one prompt.
Vecd router_predict(const RouterModel& router, const TokenSequence& prompt);

/// Mean batch loss under the given objective; exposed for gradient checks.
double batch_loss(const RouterModel& router, const std::vector<RouterSample>& batch,
                  LossMode mode);

/// Mean batch loss plus analytic gradients for every parameter group.
std::pair<double, RouterTensors> batch_loss_and_gradients(
    const RouterModel& router, const std::vector<RouterSample>& batch, LossMode mode);

/// Evaluates the configured loss for every (pair, pool entry) combination.
/// Labels use the given criterion (tl by default).
std::vector<RouterSample> build_router_dataset(const TransformerModel& model,
                                               const CandidatePool& pool,
                                               const std::vector<PromptAnswerPair>& pairs,
                                               Criterion criterion = Criterion::Tl,
                                               int threads = 1);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

/// Decoupled-weight-decay adaptive-moment training with linear warmup then a
/// constant rate. Deterministic for a fixed seed. Binds the result to `pool`.
RouterModel train_router(const std::vector<RouterSample>& samples, const CandidatePool& pool,
                         const RouterConfig& arch, const TrainConfig& config,
                         LossMode mode = LossMode::Mse,
                         std::vector<EpochStats>* epoch_log = nullptr);

struct RoutingDecision {
  int index = 0;  // 0-based position in the pool
  OmissionSet set;
  Vecd predicted;  // full ŝ for diagnostics
};

/// argmin over predicted losses (tie → lowest index). The pool must hash to
/// the router's recorded binding.
RoutingDecision route(const RouterModel& router, const TokenSequence& prompt,
                      const CandidatePool& pool);

struct RouterMetrics {
  double accuracy = 0.0;  // fraction of samples where argmin ŝ == argmin label
  double regret = 0.0;    // mean of label[chosen] − min(label), ≥ 0
  double mse = 0.0;       // mean squared error per label entry
};

RouterMetrics evaluate_router(const RouterModel& router,
                              const std::vector<RouterSample>& held_out);

/// Deterministic seed-controlled split; `val_fraction` of samples (rounded
/// down, at least 1 when possible) go to the second list.
std::pair<std::vector<RouterSample>, std::vector<RouterSample>> split_samples(
    const std::vector<RouterSample>& samples, double val_fraction, std::uint64_t seed);

/// Checkpoint bytes: magic "PUDR", version u32, config echo (vocab, embed_dim,
/// n_layers, m, max_prompt_tokens as u32), pool hash u64, final training loss
/// f64, then tensors as row-major 32-bit little-endian floats in declaration
/// order (embedding, per-layer weight then bias, head weight, head bias).
std::string serialize_router(const RouterModel& router);
RouterModel deserialize_router(const std::string& bytes);
void save_router(const RouterModel& router, const std::string& path);
RouterModel load_router(const std::string& path);

/// JSONL: one object per sample, {"prompt_tokens": [ints], "label": [floats]}.
void save_router_dataset(const std::vector<RouterSample>& samples, const std::string& path);
std::vector<RouterSample> load_router_dataset(const std::string& path);

}  // namespace pudding
