#pragma once

#include <string>
#include <vector>

#include "pudding/losses.hpp"
#include "pudding/tokenizer.hpp"
#include "pudding/types.hpp"

namespace pudding {

/// Loads prompt-answer pairs from JSONL. Two line forms are accepted:
///   {"tokens": [ints], "split": int, "wrong_answers": [[ints], ...]}
///   {"prompt": "text", "answer": "text", "wrong_answers": ["text", ...]}
/// Text-form lines are tokenized with the given tokenizer; "wrong_answers" is
/// optional in both forms.
std::vector<PromptAnswerPair> load_pairs_jsonl(const std::string& path, TokenizerKind kind,
                                               int vocab_size);

/// Writes pairs in the token form, one JSON object per line.
void save_pairs_jsonl(const std::vector<PromptAnswerPair>& pairs, const std::string& path);

/// One prompt per line, tokenized; blank lines are skipped.
std::vector<TokenSequence> load_prompt_lines(const std::string& path, TokenizerKind kind,
                                             int vocab_size);

}  // namespace pudding
