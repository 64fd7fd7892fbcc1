#include "pudding/router.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pudding/error.hpp"
#include "pudding/hash.hpp"
#include "pudding/parallel.hpp"
#include "pudding/rng.hpp"

namespace pudding {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

TokenSequence truncate_prompt(const RouterConfig& config, const TokenSequence& prompt) {
  require(!prompt.empty(), ErrorKind::Config, "router prompt must be non-empty");
  for (TokenId t : prompt.tokens) {
    require(t >= 0 && t < config.vocab, ErrorKind::Vocabulary,
            "router token id " + std::to_string(t) + " outside vocabulary of " +
                std::to_string(config.vocab));
  }
  if (prompt.length() <= config.max_prompt_tokens) return prompt;
  return TokenSequence{{prompt.tokens.begin(), prompt.tokens.begin() + config.max_prompt_tokens}};
}

struct ForwardCache {
  TokenSequence used;            // truncated prompt actually encoded
  RowVecd pooled;                // mean of embedding rows
  std::vector<RowVecd> hidden;   // post-tanh activation per layer
  RowVecd prediction;            // ŝ
};

ForwardCache forward(const RouterModel& router, const TokenSequence& prompt) {
  ForwardCache cache;
  cache.used = truncate_prompt(router.config, prompt);
  const int n = cache.used.length();
  cache.pooled = RowVecd::Zero(router.config.embed_dim);
  for (TokenId t : cache.used.tokens) cache.pooled += router.embedding.row(t);
  cache.pooled /= static_cast<double>(n);
  RowVecd h = cache.pooled;
  for (std::size_t l = 0; l < router.layer_w.size(); ++l) {
    h = ((h * router.layer_w[l]).rowwise() + router.layer_b[l].transpose())
            .array()
            .tanh();
    cache.hidden.push_back(h);
  }
  cache.prediction = (h * router.head_w).rowwise() + router.head_b.transpose();
  return cache;
}

RowVecd softmax_neg(const RowVecd& s) {
  RowVecd q = -s;
  const double mx = q.maxCoeff();
  RowVecd e = (q.array() - mx).exp();
  return e / e.sum();
}

int argmin_lowest(const RowVecd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v(i) < v(best)) best = i;
  }
  return best;
}

int argmin_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<std::size_t>(i)] < v[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

// Per-sample loss and its derivative with respect to the prediction.
double sample_loss(const RowVecd& pred, const std::vector<double>& label, LossMode mode,
                   RowVecd& dpred) {
  const int m = static_cast<int>(label.size());
  RowVecd target(m);
  for (int j = 0; j < m; ++j) target(j) = label[static_cast<std::size_t>(j)];
  switch (mode) {
    case LossMode::Mse: {
      RowVecd diff = pred - target;
      dpred = 2.0 * diff;
      return diff.squaredNorm();
    }
    case LossMode::Ce:
    case LossMode::CeOnehot: {
      RowVecd t;
      if (mode == LossMode::Ce) {
        t = softmax_neg(target);
      } else {
        t = RowVecd::Zero(m);
        t(argmin_lowest(label)) = 1.0;
      }
      // Predicted distribution is softmax over negated predictions; use the
      // log-sum-exp form for a stable log-probability.
      RowVecd q = -pred;
      const double mx = q.maxCoeff();
      const double lse = mx + std::log((q.array() - mx).exp().sum());
      RowVecd logp = q.array() - lse;
      RowVecd p = logp.array().exp();
      dpred = t - p;
      return -(t.array() * logp.array()).sum();
    }
  }
  fail(ErrorKind::Config, "unknown loss mode");
}

RouterTensors zeros_like(const RouterModel& router) {
  RouterTensors t;
  t.embedding = Matd::Zero(router.embedding.rows(), router.embedding.cols());
  for (const auto& w : router.layer_w) t.layer_w.push_back(Matd::Zero(w.rows(), w.cols()));
  for (const auto& b : router.layer_b) t.layer_b.push_back(Vecd::Zero(b.size()));
  t.head_w = Matd::Zero(router.head_w.rows(), router.head_w.cols());
  t.head_b = Vecd::Zero(router.head_b.size());
  return t;
}

void check_batch(const RouterModel& router, const std::vector<RouterSample>& batch) {
  require(!batch.empty(), ErrorKind::EmptyDataset, "router batch is empty");
  for (const auto& sample : batch) {
    require(static_cast<int>(sample.label.size()) == router.config.m, ErrorKind::ShapeMismatch,
            "label length " + std::to_string(sample.label.size()) +
                " does not match router output dimension " + std::to_string(router.config.m));
  }
}

template <class Tensor>
void adamw_step(Tensor& param, const Tensor& grad, Tensor& m1, Tensor& m2, double lr,
                double weight_decay, int step) {
  m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
  m2 = (kBeta2 * m2).eval();
  m2.array() += (1.0 - kBeta2) * grad.array().square();
  const double c1 = 1.0 - std::pow(kBeta1, step);
  const double c2 = 1.0 - std::pow(kBeta2, step);
  param.array() -= lr * ((m1.array() / c1) / ((m2.array() / c2).sqrt() + kEps) +
                         weight_decay * param.array());
}

template <class Tensor>
bool all_finite(const Tensor& t) {
  return t.array().isFinite().all();
}

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64(std::string& out, double v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class Tensor>
void put_tensor_f32(std::string& out, const Tensor& t) {
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      const float f = static_cast<float>(t(r, c));
      out.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    take(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    take(&v, sizeof v);
    return v;
  }
  double f64() {
    double v = 0;
    take(&v, sizeof v);
    return v;
  }
  void magic(const char expected[4]) {
    char got[4];
    take(got, 4);
    require(std::memcmp(got, expected, 4) == 0, ErrorKind::Io,
            "bad magic bytes in router checkpoint");
  }
  Matd mat(Eigen::Index rows, Eigen::Index cols) {
    Matd out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        float f = 0;
        take(&f, sizeof f);
        out(r, c) = static_cast<double>(f);
      }
    }
    return out;
  }
  Vecd vec(Eigen::Index n) {
    Vecd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      float f = 0;
      take(&f, sizeof f);
      out(i) = static_cast<double>(f);
    }
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void take(void* dst, std::size_t n) {
    require(pos_ + n <= bytes_.size(), ErrorKind::Io, "router checkpoint is truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* to_string(LossMode mode) {
  switch (mode) {
    case LossMode::Mse: return "mse";
    case LossMode::Ce: return "ce";
    case LossMode::CeOnehot: return "ce-onehot";
  }
  return "?";
}

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "mse") return LossMode::Mse;
  if (s == "ce") return LossMode::Ce;
  if (s == "ce-onehot") return LossMode::CeOnehot;
  fail(ErrorKind::Config, "unknown loss mode '" + s + "' (expected mse|ce)");
}

RouterModel init_router(const RouterConfig& config, std::uint64_t seed) {
  require(config.vocab > 0 && config.embed_dim > 0 && config.m > 0, ErrorKind::Config,
          "router config needs positive vocab, embed_dim, and m");
  require(config.n_layers >= 0 && config.n_layers <= 2, ErrorKind::Config,
          "router supports 0..2 dense layers");
  require(config.max_prompt_tokens > 0, ErrorKind::Config,
          "max_prompt_tokens must be positive");
  RouterModel router;
  router.config = config;
  auto rng = seeded_rng(seed, "router-init");
  std::normal_distribution<double> small(0.0, 0.02);
  std::normal_distribution<double> layer_scale(0.0, 1.0 / std::sqrt(config.embed_dim));
  auto fill = [&](auto& tensor, auto& dist) {
    for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
      for (Eigen::Index c = 0; c < tensor.cols(); ++c) tensor(r, c) = dist(rng);
    }
  };
  router.embedding = Matd(config.vocab, config.embed_dim);
  fill(router.embedding, small);
  for (int l = 0; l < config.n_layers; ++l) {
    Matd w(config.embed_dim, config.embed_dim);
    fill(w, layer_scale);
    router.layer_w.push_back(std::move(w));
    router.layer_b.push_back(Vecd::Zero(config.embed_dim));
  }
  router.head_w = Matd(config.embed_dim, config.m);
  fill(router.head_w, small);
  router.head_b = Vecd::Zero(config.m);
  return router;
}

Vecd router_predict(const RouterModel& router, const TokenSequence& prompt) {
  return forward(router, prompt).prediction.transpose();
}

double batch_loss(const RouterModel& router, const std::vector<RouterSample>& batch,
                  LossMode mode) {
  check_batch(router, batch);
  double total = 0.0;
  for (const auto& sample : batch) {
    RowVecd dpred;
    total += sample_loss(forward(router, sample.prompt_tokens).prediction, sample.label, mode,
                         dpred);
  }
  return total / static_cast<double>(batch.size());
}

std::pair<double, RouterTensors> batch_loss_and_gradients(
    const RouterModel& router, const std::vector<RouterSample>& batch, LossMode mode) {
  check_batch(router, batch);
  RouterTensors grads = zeros_like(router);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& sample : batch) {
    const ForwardCache cache = forward(router, sample.prompt_tokens);
    RowVecd dpred;
    total += sample_loss(cache.prediction, sample.label, mode, dpred);
    dpred *= inv_batch;

    const RowVecd& last_hidden =
        cache.hidden.empty() ? cache.pooled : cache.hidden.back();
    grads.head_b += dpred.transpose();
    grads.head_w += last_hidden.transpose() * dpred;
    RowVecd dh = dpred * router.head_w.transpose();
    for (int l = static_cast<int>(router.layer_w.size()) - 1; l >= 0; --l) {
      const RowVecd& act = cache.hidden[static_cast<std::size_t>(l)];
      const RowVecd& input =
          (l == 0) ? cache.pooled : cache.hidden[static_cast<std::size_t>(l - 1)];
      RowVecd dz = dh.array() * (1.0 - act.array().square());
      grads.layer_b[static_cast<std::size_t>(l)] += dz.transpose();
      grads.layer_w[static_cast<std::size_t>(l)] += input.transpose() * dz;
      dh = dz * router.layer_w[static_cast<std::size_t>(l)].transpose();
    }
    const double inv_len = 1.0 / static_cast<double>(cache.used.length());
    for (TokenId t : cache.used.tokens) grads.embedding.row(t) += dh * inv_len;
  }
  return {total * inv_batch, grads};
}

std::vector<RouterSample> build_router_dataset(const TransformerModel& model,
                                               const CandidatePool& pool,
                                               const std::vector<PromptAnswerPair>& pairs,
                                               Criterion criterion, int threads) {
  require(pool.size() > 0, ErrorKind::Config, "candidate pool is empty");
  require(!pairs.empty(), ErrorKind::EmptyDataset, "no prompt-answer pairs provided");
  std::vector<PrunedView> views;
  views.reserve(static_cast<std::size_t>(pool.size()));
  for (const auto& entry : pool.entries) views.push_back(apply_omission(model, entry.set));

  std::vector<RouterSample> samples(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), threads, [&](int i) {
    const auto& pair = pairs[static_cast<std::size_t>(i)];
    RouterSample sample;
    sample.prompt_tokens = pair.prompt();
    sample.label.resize(static_cast<std::size_t>(pool.size()));
    for (int j = 0; j < pool.size(); ++j) {
      try {
        sample.label[static_cast<std::size_t>(j)] =
            pair_loss(views[static_cast<std::size_t>(j)], pair, criterion).value;
      } catch (const Error& e) {
        fail(e.kind(), "sample " + std::to_string(i) + ", pool entry " + std::to_string(j) +
                           ": " + e.what());
      }
    }
    samples[static_cast<std::size_t>(i)] = std::move(sample);
  });
  return samples;
}

RouterModel train_router(const std::vector<RouterSample>& samples, const CandidatePool& pool,
                         const RouterConfig& arch, const TrainConfig& config, LossMode mode,
                         std::vector<EpochStats>* epoch_log) {
  require(!samples.empty(), ErrorKind::EmptyDataset, "no router training samples");
  require(arch.m == pool.size(), ErrorKind::Config,
          "router output dimension " + std::to_string(arch.m) +
              " does not match pool size " + std::to_string(pool.size()));
  require(config.learning_rate > 0 && config.weight_decay >= 0 && config.batch_size > 0 &&
              config.epochs >= 0 && config.warmup_steps >= 0,
          ErrorKind::Config, "invalid training hyperparameters");

  RouterModel router = init_router(arch, config.seed);
  router.pool_binding = pool_hash(pool);
  check_batch(router, samples);

  const int n = static_cast<int>(samples.size());
  const int batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(batches_per_epoch) * config.epochs;
  const long warmup = std::min<long>(config.warmup_steps, std::max<long>(total_steps, 1));

  if (config.epochs == 0) {
    router.final_train_loss = batch_loss(router, samples, mode);
    return router;
  }

  RouterTensors m1 = zeros_like(router);
  RouterTensors m2 = zeros_like(router);
  auto rng = seeded_rng(config.seed, "train");
  std::vector<int> order(samples.size());
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      std::vector<RouterSample> batch;
      batch.reserve(static_cast<std::size_t>(end - start));
      for (int i = start; i < end; ++i) {
        batch.push_back(samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      }
      auto [loss, grads] = batch_loss_and_gradients(router, batch, mode);
      ++step;
      const bool finite = std::isfinite(loss) && all_finite(grads.embedding) &&
                          all_finite(grads.head_w) && all_finite(grads.head_b);
      require(finite, ErrorKind::Divergence,
              "non-finite loss or gradient at training step " + std::to_string(step));
      const double lr =
          config.learning_rate *
          (warmup > 0 ? std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup))
                      : 1.0);
      adamw_step(router.embedding, grads.embedding, m1.embedding, m2.embedding, lr,
                 config.weight_decay, step);
      for (std::size_t l = 0; l < router.layer_w.size(); ++l) {
        adamw_step(router.layer_w[l], grads.layer_w[l], m1.layer_w[l], m2.layer_w[l], lr,
                   config.weight_decay, step);
        adamw_step(router.layer_b[l], grads.layer_b[l], m1.layer_b[l], m2.layer_b[l], lr,
                   config.weight_decay, step);
      }
      adamw_step(router.head_w, grads.head_w, m1.head_w, m2.head_w, lr, config.weight_decay,
                 step);
      adamw_step(router.head_b, grads.head_b, m1.head_b, m2.head_b, lr, config.weight_decay,
                 step);
      epoch_loss += loss * static_cast<double>(end - start);
    }
    epoch_loss /= static_cast<double>(n);
    router.final_train_loss = epoch_loss;
    if (epoch_log) epoch_log->push_back({epoch + 1, epoch_loss});
  }
  return router;
}

RoutingDecision route(const RouterModel& router, const TokenSequence& prompt,
                      const CandidatePool& pool) {
  require(pool_hash(pool) == router.pool_binding, ErrorKind::PoolBinding,
          "pool does not match the pool this router was trained against");
  require(pool.size() == router.config.m, ErrorKind::PoolBinding,
          "pool size does not match router output dimension");
  RoutingDecision decision;
  decision.predicted = router_predict(router, prompt);
  decision.index = argmin_lowest(RowVecd(decision.predicted.transpose()));
  decision.set = pool.entries[static_cast<std::size_t>(decision.index)].set;
  return decision;
}

RouterMetrics evaluate_router(const RouterModel& router,
                              const std::vector<RouterSample>& held_out) {
  check_batch(router, held_out);
  RouterMetrics metrics;
  for (const auto& sample : held_out) {
    const Vecd pred = router_predict(router, sample.prompt_tokens);
    const int chosen = argmin_lowest(RowVecd(pred.transpose()));
    const int best = argmin_lowest(sample.label);
    if (chosen == best) metrics.accuracy += 1.0;
    metrics.regret += sample.label[static_cast<std::size_t>(chosen)] -
                      sample.label[static_cast<std::size_t>(best)];
    double se = 0.0;
    for (int j = 0; j < router.config.m; ++j) {
      const double diff = pred(j) - sample.label[static_cast<std::size_t>(j)];
      se += diff * diff;
    }
    metrics.mse += se / static_cast<double>(router.config.m);
  }
  const double inv = 1.0 / static_cast<double>(held_out.size());
  metrics.accuracy *= inv;
  metrics.regret *= inv;
  metrics.mse *= inv;
  return metrics;
}

std::pair<std::vector<RouterSample>, std::vector<RouterSample>> split_samples(
    const std::vector<RouterSample>& samples, double val_fraction, std::uint64_t seed) {
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorKind::Config,
          "validation fraction must be in [0, 1)");
  const int n = static_cast<int>(samples.size());
  std::vector<int> order(samples.size());
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  auto rng = seeded_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  int n_val = static_cast<int>(static_cast<double>(n) * val_fraction);
  if (n_val == 0 && val_fraction > 0.0 && n > 1) n_val = 1;
  std::vector<RouterSample> val, train;
  for (int i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    (i < n_val ? val : train).push_back(s);
  }
  return {std::move(train), std::move(val)};
}

std::string serialize_router(const RouterModel& router) {
  std::string out;
  out.append("PUDR", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(router.config.vocab));
  put_u32(out, static_cast<std::uint32_t>(router.config.embed_dim));
  put_u32(out, static_cast<std::uint32_t>(router.config.n_layers));
  put_u32(out, static_cast<std::uint32_t>(router.config.m));
  put_u32(out, static_cast<std::uint32_t>(router.config.max_prompt_tokens));
  put_u64(out, router.pool_binding);
  put_f64(out, router.final_train_loss);
  put_tensor_f32(out, router.embedding);
  for (std::size_t l = 0; l < router.layer_w.size(); ++l) {
    put_tensor_f32(out, router.layer_w[l]);
    put_tensor_f32(out, router.layer_b[l]);
  }
  put_tensor_f32(out, router.head_w);
  put_tensor_f32(out, router.head_b);
  return out;
}

RouterModel deserialize_router(const std::string& bytes) {
  Reader reader(bytes);
  reader.magic("PUDR");
  const std::uint32_t version = reader.u32();
  require(version == 1, ErrorKind::Io,
          "unsupported router checkpoint version " + std::to_string(version));
  RouterModel router;
  router.config.vocab = static_cast<int>(reader.u32());
  router.config.embed_dim = static_cast<int>(reader.u32());
  router.config.n_layers = static_cast<int>(reader.u32());
  router.config.m = static_cast<int>(reader.u32());
  router.config.max_prompt_tokens = static_cast<int>(reader.u32());
  require(router.config.vocab > 0 && router.config.embed_dim > 0 && router.config.m > 0 &&
              router.config.n_layers >= 0 && router.config.n_layers <= 2 &&
              router.config.max_prompt_tokens > 0,
          ErrorKind::Io, "router checkpoint header has invalid dimensions");
  router.pool_binding = reader.u64();
  router.final_train_loss = reader.f64();
  const int e = router.config.embed_dim;
  router.embedding = reader.mat(router.config.vocab, e);
  for (int l = 0; l < router.config.n_layers; ++l) {
    router.layer_w.push_back(reader.mat(e, e));
    router.layer_b.push_back(reader.vec(e));
  }
  router.head_w = reader.mat(e, router.config.m);
  router.head_b = reader.vec(router.config.m);
  require(reader.done(), ErrorKind::Io, "router checkpoint has trailing bytes");
  return router;
}

void save_router(const RouterModel& router, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  const std::string bytes = serialize_router(router);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::Io, "failed writing router checkpoint to '" + path + "'");
}

RouterModel load_router(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open router checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_router(buf.str());
}

void save_router_dataset(const std::vector<RouterSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  for (const auto& sample : samples) {
    nlohmann::ordered_json j;
    j["prompt_tokens"] = sample.prompt_tokens.tokens;
    j["label"] = sample.label;
    out << j.dump() << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed writing router dataset to '" + path + "'");
}

std::vector<RouterSample> load_router_dataset(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open router dataset '" + path + "'");
  std::vector<RouterSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      RouterSample sample;
      sample.prompt_tokens.tokens = j.at("prompt_tokens").get<std::vector<TokenId>>();
      sample.label = j.at("label").get<std::vector<double>>();
      samples.push_back(std::move(sample));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Io,
           "bad router dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace pudding
