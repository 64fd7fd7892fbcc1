#include "pudding/data.hpp"

#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pudding/error.hpp"

namespace pudding {

namespace {

PromptAnswerPair pair_from_json(const nlohmann::json& j, TokenizerKind kind, int vocab_size,
                                int line_no) {
  PromptAnswerPair pair;
  if (j.contains("tokens")) {
    pair.tokens.tokens = j.at("tokens").get<std::vector<TokenId>>();
    pair.split = j.at("split").get<int>();
    if (j.contains("wrong_answers")) {
      for (const auto& w : j.at("wrong_answers")) {
        pair.wrong_answers.push_back(TokenSequence{w.get<std::vector<TokenId>>()});
      }
    }
  } else {
    const std::string prompt = j.at("prompt").get<std::string>();
    const std::string answer = j.at("answer").get<std::string>();
    const TokenSequence prompt_tokens = tokenize(prompt, kind, vocab_size);
    const TokenSequence answer_tokens = tokenize(answer, kind, vocab_size);
    pair.tokens.tokens = prompt_tokens.tokens;
    pair.tokens.tokens.insert(pair.tokens.tokens.end(), answer_tokens.tokens.begin(),
                              answer_tokens.tokens.end());
    pair.split = prompt_tokens.length();
    if (j.contains("wrong_answers")) {
      for (const auto& w : j.at("wrong_answers")) {
        pair.wrong_answers.push_back(tokenize(w.get<std::string>(), kind, vocab_size));
      }
    }
  }
  require(pair.split >= 0 && pair.split < pair.tokens.length(), ErrorKind::Io,
          "line " + std::to_string(line_no) + ": split must satisfy 0 <= split < length");
  for (TokenId t : pair.tokens.tokens) {
    require(t >= 0 && t < vocab_size, ErrorKind::Io,
            "line " + std::to_string(line_no) + ": token id " + std::to_string(t) +
                " outside vocabulary of " + std::to_string(vocab_size));
  }
  return pair;
}

}  // namespace

std::vector<PromptAnswerPair> load_pairs_jsonl(const std::string& path, TokenizerKind kind,
                                               int vocab_size) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open dataset '" + path + "'");
  std::vector<PromptAnswerPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      pairs.push_back(pair_from_json(nlohmann::json::parse(line), kind, vocab_size, line_no));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Io, "bad dataset line " + std::to_string(line_no) + " in '" + path +
                              "': " + e.what());
    }
  }
  return pairs;
}

void save_pairs_jsonl(const std::vector<PromptAnswerPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  for (const auto& pair : pairs) {
    nlohmann::ordered_json j;
    j["tokens"] = pair.tokens.tokens;
    j["split"] = pair.split;
    if (!pair.wrong_answers.empty()) {
      auto wrongs = nlohmann::ordered_json::array();
      for (const auto& w : pair.wrong_answers) wrongs.push_back(w.tokens);
      j["wrong_answers"] = std::move(wrongs);
    }
    out << j.dump() << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed writing pairs to '" + path + "'");
}

std::vector<TokenSequence> load_prompt_lines(const std::string& path, TokenizerKind kind,
                                             int vocab_size) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open prompt file '" + path + "'");
  std::vector<TokenSequence> prompts;
  std::string line;
  while (std::getline(in, line)) {
    bool blank = true;
    for (char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) {
        blank = false;
        break;
      }
    }
    if (blank) continue;
    prompts.push_back(tokenize(line, kind, vocab_size));
  }
  return prompts;
}

}  // namespace pudding
