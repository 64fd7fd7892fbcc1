#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "pudding/error.hpp"
#include "pudding/fixtures.hpp"
#include "pudding/losses.hpp"
#include "pudding/model.hpp"
#include "pudding/rng.hpp"

using namespace pudding;

namespace {

TransformerModel make_model(std::uint64_t seed) {
  ModelConfig cfg{16, 8, 16, 2, 2, PositionalKind::Learned, 64};
  return random_model(cfg, seed);
}

TokenSequence random_tokens(int len, int vocab, std::uint64_t seed) {
  auto rng = seeded_rng(seed, "loss-tokens");
  TokenSequence z;
  for (int i = 0; i < len; ++i) {
    z.tokens.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab)));
  }
  return z;
}

// Direct recomputation from the log-prob table: mean over positions
// [from, T) of -log p(z[t] | z[<t]).
double mean_nll_by_hand(const PrunedView& view, const TokenSequence& z, int from) {
  const auto table = forward_logprobs(view, z);
  double sum = 0.0;
  for (int t = from; t < z.length(); ++t) {
    sum -= static_cast<double>(table(t - 1, z.tokens[static_cast<std::size_t>(t)]));
  }
  return sum / static_cast<double>(z.length() - from);
}

}  // namespace

TEST_CASE("perplexity equals exp of the task likelihood over the full continuation") {
  const TransformerModel model = make_model(41);
  const PrunedView view = apply_omission(model, {});
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto z = random_tokens(4 + static_cast<int>(s % 7), 16, s);
    PromptAnswerPair pair{z, 1, {}};
    const double ppl = perplexity(view, z).value;
    const double tl = task_likelihood(view, pair).value;
    CAPTURE(s);
    CHECK(std::abs(std::exp(tl) - ppl) <= 1e-5 * ppl);
    CHECK(std::abs(sentence_likelihood(view, z).value - std::log(ppl)) <= 1e-6);
  }
}

TEST_CASE("task likelihood matches direct table arithmetic") {
  const TransformerModel model = make_model(43);
  const PrunedView view = apply_omission(model, {});
  for (int split = 1; split <= 4; ++split) {
    const auto z = random_tokens(8, 16, static_cast<std::uint64_t>(split));
    PromptAnswerPair pair{z, split, {}};
    CHECK(task_likelihood(view, pair).value ==
          doctest::Approx(mean_nll_by_hand(view, z, split)).epsilon(1e-12));
  }
}

TEST_CASE("task likelihood difference: decomposition and antisymmetry") {
  const TransformerModel model = make_model(47);
  const PrunedView view = apply_omission(model, {});
  const auto prompt = random_tokens(5, 16, 1);
  const auto ans_a = random_tokens(3, 16, 2);
  const auto ans_b = random_tokens(4, 16, 3);

  auto join = [&](const TokenSequence& answer) {
    TokenSequence z = prompt;
    z.tokens.insert(z.tokens.end(), answer.tokens.begin(), answer.tokens.end());
    return z;
  };
  PromptAnswerPair a{join(ans_a), prompt.length(), {ans_b}};
  PromptAnswerPair b{join(ans_b), prompt.length(), {ans_a}};

  const double tl_a = task_likelihood(view, a).value;
  const double tl_b = task_likelihood(view, b).value;
  CHECK(std::abs(task_likelihood_difference(view, a).value - (tl_a - tl_b)) <= 1e-9);
  CHECK(std::abs(task_likelihood_difference(view, a).value +
                 task_likelihood_difference(view, b).value) <= 1e-9);

  // Mean over several wrong answers.
  const auto ans_c = random_tokens(2, 16, 4);
  PromptAnswerPair multi{join(ans_a), prompt.length(), {ans_b, ans_c}};
  const double tl_c = task_likelihood(view, PromptAnswerPair{join(ans_c), prompt.length(), {}}).value;
  CHECK(task_likelihood_difference(view, multi).value ==
        doctest::Approx(tl_a - 0.5 * (tl_b + tl_c)).epsilon(1e-12));
}

TEST_CASE("per-criterion dispatch and dataset mean") {
  const TransformerModel model = make_model(53);
  const PrunedView view = apply_omission(model, {});
  std::vector<PromptAnswerPair> data;
  for (std::uint64_t s = 0; s < 6; ++s) {
    auto z = random_tokens(7, 16, 100 + s);
    data.push_back({z, 3, {random_tokens(4, 16, 200 + s)}});
  }
  for (Criterion c : {Criterion::Ppl, Criterion::Tl, Criterion::Tld, Criterion::Sl}) {
    double sum = 0.0;
    for (const auto& pair : data) sum += pair_loss(view, pair, c).value;
    const auto sequential = dataset_loss(view, data, c, 1);
    const auto threaded = dataset_loss(view, data, c, 4);
    CHECK(sequential.value == doctest::Approx(sum / 6.0).epsilon(1e-12));
    CHECK(sequential.value == threaded.value);  // identical reduction order
    CHECK(sequential.criterion == c);
  }
}

TEST_CASE("criterion names round-trip and reject junk") {
  for (Criterion c : {Criterion::Ppl, Criterion::Tl, Criterion::Tld, Criterion::Sl}) {
    CHECK(criterion_from_string(to_string(c)) == c);
  }
  CHECK_THROWS_AS(criterion_from_string("nats"), Error);
}

TEST_CASE("degenerate inputs are rejected") {
  const TransformerModel model = make_model(59);
  const PrunedView view = apply_omission(model, {});
  CHECK_THROWS_AS(perplexity(view, TokenSequence{{3}}), Error);

  PromptAnswerPair no_prompt{random_tokens(5, 16, 1), 0, {}};
  CHECK_THROWS_AS(task_likelihood(view, no_prompt), Error);

  PromptAnswerPair no_wrongs{random_tokens(5, 16, 2), 2, {}};
  CHECK_THROWS_AS(task_likelihood_difference(view, no_wrongs), Error);
  try {
    task_likelihood_difference(view, no_wrongs);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingContrast);
  }

  CHECK_THROWS_AS(dataset_loss(view, {}, Criterion::Tl), Error);
}
