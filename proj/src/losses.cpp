#include "pudding/losses.hpp"

#include <cmath>

#include "pudding/error.hpp"
#include "pudding/parallel.hpp"

namespace pudding {

namespace {

// Sum of -log p over 0-based target positions [first_target, T), i.e. the
// table row i-1 evaluated at token i.
double nll_sum(const LogProbTable& table, const TokenSequence& z, int first_target) {
  double sum = 0.0;
  for (int t = first_target; t < z.length(); ++t) {
    sum -= static_cast<double>(table(t - 1, z.tokens[static_cast<std::size_t>(t)]));
  }
  return sum;
}

double mean_nll(const PrunedView& view, const TokenSequence& z, int first_target) {
  const LogProbTable table = forward_logprobs(view, z);
  const int count = z.length() - first_target;
  return nll_sum(table, z, first_target) / static_cast<double>(count);
}

void check_pair(const PromptAnswerPair& pair) {
  require(pair.split >= 0 && pair.split < pair.tokens.length(), ErrorKind::Config,
          "split index must satisfy 0 <= S < T");
}

}  // namespace

TokenSequence PromptAnswerPair::prompt() const {
  return TokenSequence{{tokens.tokens.begin(), tokens.tokens.begin() + split}};
}

TokenSequence PromptAnswerPair::with_answer(const TokenSequence& answer) const {
  TokenSequence out = prompt();
  out.tokens.insert(out.tokens.end(), answer.tokens.begin(), answer.tokens.end());
  return out;
}

const char* to_string(Criterion c) {
  switch (c) {
    case Criterion::Ppl: return "ppl";
    case Criterion::Tl: return "tl";
    case Criterion::Tld: return "tld";
    case Criterion::Sl: return "sl";
  }
  return "?";
}

Criterion criterion_from_string(const std::string& s) {
  if (s == "ppl") return Criterion::Ppl;
  if (s == "tl") return Criterion::Tl;
  if (s == "tld") return Criterion::Tld;
  if (s == "sl") return Criterion::Sl;
  fail(ErrorKind::Config, "unknown criterion '" + s + "' (expected ppl|tl|tld|sl)");
}

LossValue perplexity(const PrunedView& view, const TokenSequence& z) {
  require(z.length() >= 2, ErrorKind::InsufficientLength,
          "perplexity needs at least 2 tokens");
  return {std::exp(mean_nll(view, z, 1)), Criterion::Ppl};
}

LossValue task_likelihood(const PrunedView& view, const PromptAnswerPair& pair) {
  check_pair(pair);
  require(pair.split >= 1, ErrorKind::InsufficientLength,
          "task likelihood needs a non-empty prompt (S >= 1)");
  return {mean_nll(view, pair.tokens, pair.split), Criterion::Tl};
}

LossValue task_likelihood_difference(const PrunedView& view, const PromptAnswerPair& pair) {
  check_pair(pair);
  require(!pair.wrong_answers.empty(), ErrorKind::MissingContrast,
          "tld needs at least one wrong answer");
  const double correct = task_likelihood(view, pair).value;
  double wrong_sum = 0.0;
  for (const auto& wrong : pair.wrong_answers) {
    PromptAnswerPair alt{pair.with_answer(wrong), pair.split, {}};
    wrong_sum += task_likelihood(view, alt).value;
  }
  const double wrong_mean = wrong_sum / static_cast<double>(pair.wrong_answers.size());
  return {correct - wrong_mean, Criterion::Tld};
}

LossValue sentence_likelihood(const PrunedView& view, const TokenSequence& z) {
  require(z.length() >= 2, ErrorKind::InsufficientLength,
          "sentence likelihood needs at least 2 tokens");
  return {mean_nll(view, z, 1), Criterion::Sl};
}

LossValue pair_loss(const PrunedView& view, const PromptAnswerPair& pair, Criterion criterion) {
  switch (criterion) {
    case Criterion::Ppl: return perplexity(view, pair.tokens);
    case Criterion::Tl: return task_likelihood(view, pair);
    case Criterion::Tld: return task_likelihood_difference(view, pair);
    case Criterion::Sl: return sentence_likelihood(view, pair.tokens);
  }
  fail(ErrorKind::Config, "unknown criterion");
}

LossValue dataset_loss(const PrunedView& view, const std::vector<PromptAnswerPair>& data,
                       Criterion criterion, int threads) {
  require(!data.empty(), ErrorKind::EmptyDataset, "dataset_loss over empty dataset");
  std::vector<double> per_sample(data.size());
  parallel_for(static_cast<int>(data.size()), threads, [&](int i) {
    per_sample[static_cast<std::size_t>(i)] =
        pair_loss(view, data[static_cast<std::size_t>(i)], criterion).value;
  });
  double sum = 0.0;
  for (double v : per_sample) sum += v;
  return {sum / static_cast<double>(data.size()), criterion};
}

}  // namespace pudding
