#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <vector>

#include "pudding/error.hpp"
#include "pudding/fixtures.hpp"
#include "pudding/losses.hpp"
#include "pudding/search.hpp"

using namespace pudding;

namespace {

CalibrationDataset make_data(int vocab, std::uint64_t seed, int count = 5) {
  return {"toy", random_pairs(count, vocab, 6, 10, 1, seed)};
}

TransformerModel make_model(int n_blocks, std::uint64_t seed) {
  ModelConfig cfg{12, 8, 16, n_blocks, 2, PositionalKind::Learned, 64};
  return random_model(cfg, seed);
}

}  // namespace

TEST_CASE("each greedy step picks the exact step minimizer, lowest index on ties") {
  const auto model = make_model(5, 3);
  const auto data = make_data(12, 17);
  const auto result = greedy_search(model, data, Criterion::Tl, 3);

  REQUIRE(result.trace.size() == 3);
  REQUIRE(result.set.size() == 3);
  std::vector<BlockIndex> chosen_so_far;
  for (const auto& step : result.trace) {
    // Replay every candidate independently through dataset_loss.
    double best = 0.0;
    BlockIndex best_block = 0;
    REQUIRE(step.candidate_blocks.size() == step.candidate_losses.size());
    for (std::size_t i = 0; i < step.candidate_blocks.size(); ++i) {
      auto trial = chosen_so_far;
      trial.push_back(step.candidate_blocks[i]);
      const double loss =
          dataset_loss(apply_omission(model, make_omission_set(trial)), data.pairs, Criterion::Tl)
              .value;
      CHECK(loss == step.candidate_losses[i]);
      if (best_block == 0 || loss < best) {
        best = loss;
        best_block = step.candidate_blocks[i];
      }
    }
    CHECK(step.chosen_block == best_block);
    CHECK(step.chosen_loss == best);
    chosen_so_far.push_back(step.chosen_block);
  }
  CHECK(result.final_loss == result.trace.back().chosen_loss);
  auto sorted = chosen_so_far;
  std::sort(sorted.begin(), sorted.end());
  CHECK(result.set.indices == sorted);
}

TEST_CASE("exhaustive optimum never exceeds greedy and is lexicographically minimal") {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const auto model = make_model(6, 100 + trial);
    const auto data = make_data(12, 200 + trial, 4);
    const auto greedy = greedy_search(model, data, Criterion::Tl, 2);
    const auto best = exhaustive_search(model, data, Criterion::Tl, 2);

    const double best_loss =
        dataset_loss(apply_omission(model, best), data.pairs, Criterion::Tl).value;
    CHECK(best_loss <= greedy.final_loss);

    // Confirm global minimality by scanning all 15 subsets here too.
    double scan_best = best_loss;
    for (BlockIndex a = 1; a <= 6; ++a) {
      for (BlockIndex b = a + 1; b <= 6; ++b) {
        const double loss =
            dataset_loss(apply_omission(model, make_omission_set({a, b})), data.pairs,
                         Criterion::Tl)
                .value;
        if (loss < scan_best) scan_best = loss;
      }
    }
    CHECK(best_loss == scan_best);
  }
}

TEST_CASE("greedy edge cases and validation") {
  const auto model = make_model(4, 9);
  const auto data = make_data(12, 31);

  const auto empty = greedy_search(model, data, Criterion::Tl, 0);
  CHECK(empty.set.size() == 0);
  CHECK(empty.trace.empty());

  CHECK_THROWS_AS(greedy_search(model, data, Criterion::Tl, -1), Error);
  CHECK_THROWS_AS(greedy_search(model, data, Criterion::Tl, 4), Error);
  CHECK_THROWS_AS(greedy_search(model, CalibrationDataset{"empty", {}}, Criterion::Tl, 1), Error);
}

TEST_CASE("exhaustive search refuses combinatorial blowups") {
  const auto model = make_model(6, 9);
  const auto data = make_data(12, 31, 2);
  CHECK_THROWS_AS(exhaustive_search(model, data, Criterion::Tl, 2, /*max_subsets=*/10), Error);
  try {
    exhaustive_search(model, data, Criterion::Tl, 2, 10);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CombinatorialBlowup);
  }
}

TEST_CASE("two-pass refinement never lands above the single pass") {
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const auto model = make_model(6, 300 + trial);
    const auto data = make_data(12, 400 + trial, 4);
    const auto single = greedy_search(model, data, Criterion::Tl, 2);
    const auto refined = greedy_search(model, data, Criterion::Tl, 2, {1, true});
    CHECK(refined.final_loss <= single.final_loss);
  }
}

TEST_CASE("per-prompt search handles a single pair") {
  const auto model = make_model(5, 10);
  const auto pair = random_pairs(1, 12, 8, 8, 0, 77).front();
  const auto result = per_prompt_search(model, pair, Criterion::Ppl, 2);
  CHECK(result.set.size() == 2);
  CHECK(result.trace.size() == 2);
}

TEST_CASE("pool generation is dataset-major with provenance, stable serialization") {
  const auto model = make_model(5, 12);
  std::vector<CalibrationDataset> datasets = {{"alpha", random_pairs(3, 12, 6, 9, 1, 1)},
                                              {"beta", random_pairs(3, 12, 6, 9, 1, 2)}};
  const std::vector<Criterion> criteria = {Criterion::Tl, Criterion::Ppl};
  const auto pool = generate_pool(model, datasets, criteria, 2, {2, false});

  REQUIRE(pool.size() == 4);
  CHECK(pool.k == 2);
  CHECK(pool.entries[0].dataset == "alpha");
  CHECK(pool.entries[0].criterion == Criterion::Tl);
  CHECK(pool.entries[1].dataset == "alpha");
  CHECK(pool.entries[1].criterion == Criterion::Ppl);
  CHECK(pool.entries[2].dataset == "beta");
  CHECK(pool.entries[3].dataset == "beta");

  // Entry 0 must coincide with a direct greedy run on (alpha, tl).
  const auto direct = greedy_search(model, datasets[0], Criterion::Tl, 2);
  CHECK(pool.entries[0].set == direct.set);
  CHECK(pool.entries[0].loss == direct.final_loss);

  const std::string text = serialize_pool(pool);
  CHECK(text == serialize_pool(deserialize_pool(text)));  // canonical form round-trips
  const auto back = deserialize_pool(text);
  CHECK(back.model_hash == pool.model_hash);
  CHECK(back.entries[2].set == pool.entries[2].set);
  CHECK(pool_hash(back) == pool_hash(pool));

  // The fingerprint reacts to any set change.
  auto tweaked = pool;
  tweaked.entries[0].set = make_omission_set({4, 5});
  CHECK(pool_hash(tweaked) != pool_hash(pool));

  const auto path = std::filesystem::temp_directory_path() / "pudding_test_pool.json";
  save_pool(pool, path.string());
  CHECK(pool_hash(load_pool(path.string())) == pool_hash(pool));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_pool((path.string() + ".missing")), Error);
  CHECK_THROWS_AS(deserialize_pool("{\"k\": 2}"), Error);
}
