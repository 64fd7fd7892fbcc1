#pragma once

#include <string>

#include "pudding/types.hpp"

namespace pudding {

/// Byte: one token per input byte (vocabulary must cover 0..255).
/// Whitespace: one token per whitespace-separated word, id = FNV-1a(word)
/// mod vocab_size.
/// Ids: whitespace-separated decimal token ids taken verbatim (for fixtures
/// whose vocabularies are too small for real text).
enum class TokenizerKind { Byte, Whitespace, Ids };

const char* to_string(TokenizerKind kind);
TokenizerKind tokenizer_from_string(const std::string& s);

/// Produces a non-empty TokenSequence or fails with a config error when the
/// text contains no tokens.
TokenSequence tokenize(const std::string& text, TokenizerKind kind, int vocab_size);

}  // namespace pudding
