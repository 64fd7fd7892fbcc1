#pragma once

#include <string>
#include <vector>

#include "pudding/model.hpp"
#include "pudding/types.hpp"

namespace pudding {

// Token sequence split into prompt x = tokens[0..split) and answer
// y = tokens[split..T). Wrong answers are alternative continuations of the
// same prompt.
struct PromptAnswerPair {
  TokenSequence tokens;
  int split = 0;  // S, 0 <= S < T
  std::vector<TokenSequence> wrong_answers;

  TokenSequence prompt() const;
  TokenSequence with_answer(const TokenSequence& answer) const;
};

enum class Criterion { Ppl, Tl, Tld, Sl };

const char* to_string(Criterion c);
Criterion criterion_from_string(const std::string& s);

struct LossValue {
  double value = 0.0;
  Criterion criterion = Criterion::Ppl;
};

// exp of the mean negative log-likelihood over positions 2..T. Predictions
// for position 1 have no context and are excluded everywhere below.
LossValue perplexity(const PrunedView& view, const TokenSequence& z);

// Mean negative log-likelihood over the answer tokens only, not
// exponentiated.
LossValue task_likelihood(const PrunedView& view, const PromptAnswerPair& pair);

// tl(correct) - tl(wrong), averaged over the provided wrong answers.
LossValue task_likelihood_difference(const PrunedView& view, const PromptAnswerPair& pair);

// Mean negative log-likelihood over positions 2..T; log-domain perplexity.
LossValue sentence_likelihood(const PrunedView& view, const TokenSequence& z);

// Per-pair dispatch on the criterion (ppl/sl read the full sequence).
LossValue pair_loss(const PrunedView& view, const PromptAnswerPair& pair, Criterion criterion);

// Arithmetic mean of per-sample losses, 64-bit accumulation in sample order.
LossValue dataset_loss(const PrunedView& view, const std::vector<PromptAnswerPair>& data,
                       Criterion criterion, int threads = 1);

}  // namespace pudding
