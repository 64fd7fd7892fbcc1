#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pudding/error.hpp"
#include "pudding/fixtures.hpp"
#include "pudding/router.hpp"
#include "pudding/rng.hpp"
#include "pudding/search.hpp"

using namespace pudding;

namespace {

std::vector<RouterSample> make_samples(int count, const RouterConfig& cfg, std::uint64_t seed) {
  auto rng = seeded_rng(seed, "router-test");
  std::vector<RouterSample> samples;
  for (int i = 0; i < count; ++i) {
    RouterSample s;
    const int len = 3 + static_cast<int>(rng() % 5);
    for (int t = 0; t < len; ++t) {
      s.prompt_tokens.tokens.push_back(
          static_cast<TokenId>(rng() % static_cast<std::uint64_t>(cfg.vocab)));
    }
    for (int j = 0; j < cfg.m; ++j) {
      s.label.push_back(static_cast<double>(rng() % 1000) / 250.0);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

CandidatePool make_pool(int m, int k = 2) {
  CandidatePool pool;
  pool.k = k;
  pool.model_hash = "feedfacefeedface";
  for (int j = 0; j < m; ++j) {
    pool.entries.push_back(
        {make_omission_set({static_cast<BlockIndex>(j + 1), static_cast<BlockIndex>(j + 2)}),
         "task" + std::to_string(j), Criterion::Tl, 1.0 + j});
  }
  return pool;
}

double rel_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Central-difference gradient of the batch loss w.r.t. one scalar parameter,
// addressed through a mutable copy of the router.
template <typename Touch>
double numeric_grad(const RouterModel& router, const std::vector<RouterSample>& batch,
                    LossMode mode, Touch touch) {
  const double h = 1e-6;
  RouterModel plus = router;
  touch(plus) += h;
  RouterModel minus = router;
  touch(minus) -= h;
  return (batch_loss(plus, batch, mode) - batch_loss(minus, batch, mode)) / (2.0 * h);
}

}  // namespace

TEST_CASE("analytic gradients match central differences for every parameter group") {
  RouterConfig cfg;
  cfg.vocab = 10;
  cfg.embed_dim = 6;
  cfg.n_layers = 2;
  cfg.m = 4;
  const RouterModel router = init_router(cfg, 99);
  const auto batch = make_samples(5, cfg, 7);

  for (LossMode mode : {LossMode::Mse, LossMode::Ce, LossMode::CeOnehot}) {
    CAPTURE(static_cast<int>(mode));
    const auto [loss, grads] = batch_loss_and_gradients(router, batch, mode);
    CHECK(loss == doctest::Approx(batch_loss(router, batch, mode)).epsilon(1e-12));

    double worst = 0.0;
    for (int r = 0; r < router.embedding.rows(); ++r) {
      for (int c = 0; c < router.embedding.cols(); ++c) {
        const double num = numeric_grad(router, batch, mode,
                                        [=](RouterModel& m) -> double& { return m.embedding(r, c); });
        worst = std::max(worst, rel_gap(grads.embedding(r, c), num));
      }
    }
    CHECK(worst < 1e-4);  // embedding

    for (std::size_t l = 0; l < router.layer_w.size(); ++l) {
      double worst_w = 0.0, worst_b = 0.0;
      for (int r = 0; r < router.layer_w[l].rows(); ++r) {
        for (int c = 0; c < router.layer_w[l].cols(); ++c) {
          const double num = numeric_grad(
              router, batch, mode, [=](RouterModel& m) -> double& { return m.layer_w[l](r, c); });
          worst_w = std::max(worst_w, rel_gap(grads.layer_w[l](r, c), num));
        }
      }
      for (int r = 0; r < router.layer_b[l].size(); ++r) {
        const double num = numeric_grad(
            router, batch, mode, [=](RouterModel& m) -> double& { return m.layer_b[l](r); });
        worst_b = std::max(worst_b, rel_gap(grads.layer_b[l](r), num));
      }
      CHECK(worst_w < 1e-4);  // dense layer weight
      CHECK(worst_b < 1e-4);  // dense layer bias
    }

    double worst_hw = 0.0, worst_hb = 0.0;
    for (int r = 0; r < router.head_w.rows(); ++r) {
      for (int c = 0; c < router.head_w.cols(); ++c) {
        const double num = numeric_grad(router, batch, mode,
                                        [=](RouterModel& m) -> double& { return m.head_w(r, c); });
        worst_hw = std::max(worst_hw, rel_gap(grads.head_w(r, c), num));
      }
    }
    for (int r = 0; r < router.head_b.size(); ++r) {
      const double num = numeric_grad(router, batch, mode,
                                      [=](RouterModel& m) -> double& { return m.head_b(r); });
      worst_hb = std::max(worst_hb, rel_gap(grads.head_b(r), num));
    }
    CHECK(worst_hw < 1e-4);  // head weight
    CHECK(worst_hb < 1e-4);  // head bias
  }
}

TEST_CASE("training lowers the objective and is seed-deterministic") {
  const CandidatePool pool = make_pool(3);
  RouterConfig cfg;
  cfg.vocab = 12;
  cfg.embed_dim = 8;
  cfg.n_layers = 1;
  cfg.m = pool.size();
  const auto samples = make_samples(24, cfg, 11);

  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.batch_size = 8;
  tc.epochs = 40;
  tc.warmup_steps = 10;
  tc.seed = 5;

  for (LossMode mode : {LossMode::Mse, LossMode::Ce}) {
    std::vector<EpochStats> log;
    const RouterModel trained = train_router(samples, pool, cfg, tc, mode, &log);
    REQUIRE(log.size() == 40);
    CHECK(log.back().mean_loss < log.front().mean_loss);
    CHECK(trained.final_train_loss == log.back().mean_loss);
    CHECK(trained.pool_binding == pool_hash(pool));
    CHECK(trained.config.m == pool.size());

    const RouterModel again = train_router(samples, pool, cfg, tc, mode, nullptr);
    CHECK(serialize_router(trained) == serialize_router(again));
    TrainConfig other = tc;
    other.seed = 6;
    const RouterModel different = train_router(samples, pool, cfg, other, mode, nullptr);
    CHECK(serialize_router(trained) != serialize_router(different));
  }
}

TEST_CASE("routing prefers the smallest predicted loss, ties to the lowest index") {
  const CandidatePool pool = make_pool(3);
  RouterConfig cfg;
  cfg.vocab = 12;
  cfg.embed_dim = 4;
  cfg.n_layers = 1;
  cfg.m = pool.size();
  RouterModel router = init_router(cfg, 3);
  router.pool_binding = pool_hash(pool);

  // Zeroed network: every prediction identical -> index 0.
  router.embedding.setZero();
  for (auto& w : router.layer_w) w.setZero();
  for (auto& b : router.layer_b) b.setZero();
  router.head_w.setZero();
  router.head_b.setZero();
  const TokenSequence prompt{{1, 2, 3}};
  CHECK(route(router, prompt, pool).index == 0);

  router.head_b << 4.0, -1.0, 2.0;
  const auto decision = route(router, prompt, pool);
  CHECK(decision.index == 1);
  CHECK(decision.set == pool.entries[1].set);
  CHECK(decision.predicted.size() == 3);

  CandidatePool other = make_pool(3);
  other.entries[0].set = make_omission_set({5, 6});
  CHECK_THROWS_AS(route(router, prompt, other), Error);
  try {
    route(router, prompt, other);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PoolBinding);
  }
}

TEST_CASE("checkpoints round-trip exactly through the 32-bit container") {
  const CandidatePool pool = make_pool(4);
  RouterConfig cfg;
  cfg.vocab = 9;
  cfg.embed_dim = 5;
  cfg.n_layers = 2;
  cfg.m = pool.size();
  RouterModel router = init_router(cfg, 21);
  router.pool_binding = pool_hash(pool);
  router.final_train_loss = 0.125;

  const std::string bytes = serialize_router(router);
  const RouterModel back = deserialize_router(bytes);
  CHECK(serialize_router(back) == bytes);
  CHECK(back.config.vocab == 9);
  CHECK(back.config.embed_dim == 5);
  CHECK(back.config.n_layers == 2);
  CHECK(back.config.m == 4);
  CHECK(back.pool_binding == router.pool_binding);
  CHECK(back.final_train_loss == 0.125);

  const auto path = std::filesystem::temp_directory_path() / "pudding_test_router.pudr";
  save_router(router, path.string());
  CHECK(serialize_router(load_router(path.string())) == bytes);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(deserialize_router(bytes.substr(0, 20)), Error);
  CHECK_THROWS_AS(deserialize_router("XXXX" + bytes.substr(4)), Error);
}

TEST_CASE("router datasets survive the JSONL round trip bit-for-bit") {
  RouterConfig cfg;
  cfg.vocab = 8;
  cfg.embed_dim = 4;
  cfg.m = 3;
  const auto samples = make_samples(6, cfg, 31);
  const auto path = std::filesystem::temp_directory_path() / "pudding_test_samples.jsonl";
  save_router_dataset(samples, path.string());
  const auto back = load_router_dataset(path.string());
  std::filesystem::remove(path);

  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].prompt_tokens.tokens == samples[i].prompt_tokens.tokens);
    CHECK(back[i].label == samples[i].label);
  }
}

TEST_CASE("validation split is deterministic, disjoint, and exhaustive") {
  RouterConfig cfg;
  cfg.vocab = 8;
  cfg.embed_dim = 4;
  cfg.m = 2;
  const auto samples = make_samples(20, cfg, 41);
  const auto [train_a, val_a] = split_samples(samples, 0.1, 3);
  const auto [train_b, val_b] = split_samples(samples, 0.1, 3);
  CHECK(val_a.size() == 2);
  CHECK(train_a.size() == 18);
  CHECK(train_b.size() == train_a.size());
  for (std::size_t i = 0; i < val_a.size(); ++i) {
    CHECK(val_a[i].prompt_tokens.tokens == val_b[i].prompt_tokens.tokens);
  }
  const auto [train_c, val_c] = split_samples(samples, 0.1, 4);
  CHECK(train_c.size() == 18);  // same proportions, different membership allowed
}

TEST_CASE("metrics on a hand-wired constant router") {
  RouterConfig cfg;
  cfg.vocab = 8;
  cfg.embed_dim = 4;
  cfg.n_layers = 1;
  cfg.m = 2;
  RouterModel router = init_router(cfg, 1);
  router.embedding.setZero();
  for (auto& w : router.layer_w) w.setZero();
  for (auto& b : router.layer_b) b.setZero();
  router.head_w.setZero();
  router.head_b << 0.0, 1.0;  // always predicts entry 0

  std::vector<RouterSample> held;
  held.push_back({TokenSequence{{1}}, {1.0, 3.0}});  // correct, regret 0
  held.push_back({TokenSequence{{2}}, {5.0, 2.0}});  // wrong, regret 3
  const RouterMetrics metrics = evaluate_router(router, held);
  CHECK(metrics.accuracy == doctest::Approx(0.5));
  CHECK(metrics.regret == doctest::Approx(1.5));
  // mse: mean over samples and entries of (label - prediction)^2 with
  // prediction fixed at (0, 1): ((1)^2+(2)^2 + (5)^2+(1)^2)/4
  CHECK(metrics.mse == doctest::Approx((1.0 + 4.0 + 25.0 + 1.0) / 4.0));
}
