#include "pudding/tokenizer.hpp"

#include <cctype>

#include "pudding/error.hpp"
#include "pudding/hash.hpp"

namespace pudding {

const char* to_string(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::Byte: return "byte";
    case TokenizerKind::Whitespace: return "whitespace";
    case TokenizerKind::Ids: return "ids";
  }
  return "?";
}

TokenizerKind tokenizer_from_string(const std::string& s) {
  if (s == "byte") return TokenizerKind::Byte;
  if (s == "whitespace") return TokenizerKind::Whitespace;
  if (s == "ids") return TokenizerKind::Ids;
  fail(ErrorKind::Config, "unknown tokenizer '" + s + "' (expected byte|whitespace|ids)");
}

TokenSequence tokenize(const std::string& text, TokenizerKind kind, int vocab_size) {
  require(vocab_size > 0, ErrorKind::Config, "vocab_size must be positive");
  TokenSequence out;
  switch (kind) {
    case TokenizerKind::Byte: {
      require(vocab_size >= 256, ErrorKind::Config,
              "byte tokenizer needs vocab_size >= 256, got " + std::to_string(vocab_size));
      out.tokens.reserve(text.size());
      for (unsigned char c : text) out.tokens.push_back(static_cast<TokenId>(c));
      break;
    }
    case TokenizerKind::Whitespace:
    case TokenizerKind::Ids: {
      std::size_t i = 0;
      while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i == start) continue;
        const std::string word = text.substr(start, i - start);
        if (kind == TokenizerKind::Whitespace) {
          const std::uint64_t h = fnv1a64(word);
          out.tokens.push_back(static_cast<TokenId>(h % static_cast<std::uint64_t>(vocab_size)));
        } else {
          TokenId id = 0;
          try {
            id = static_cast<TokenId>(std::stol(word));
          } catch (const std::exception&) {
            fail(ErrorKind::Config, "'" + word + "' is not a token id");
          }
          require(id >= 0 && id < vocab_size, ErrorKind::Config,
                  "token id " + word + " outside vocabulary of " + std::to_string(vocab_size));
          out.tokens.push_back(id);
        }
      }
      break;
    }
  }
  require(!out.empty(), ErrorKind::Config, "text produced no tokens");
  return out;
}

}  // namespace pudding
