#pragma once

#include <stdexcept>
#include <string>

namespace pudding {

enum class ErrorKind {
  Config,               // bad configuration or argument validation
  InvalidOmission,      // block index out of range
  EmptyModel,           // omission would leave zero blocks
  Vocabulary,           // token id outside the model vocabulary
  SequenceTooLong,      // exceeds positional table
  InsufficientLength,   // sequence too short for the criterion
  MissingContrast,      // tld requested without wrong answers
  EmptyDataset,
  EmptyWorkload,
  InvalidK,
  CombinatorialBlowup,  // exhaustive search above the subset cap
  ShapeMismatch,
  Divergence,           // non-finite gradient during training
  PoolBinding,          // router bound to a different pool
  InvalidBandwidth,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  // Exit-code contract of the CLI: 2 config, 3 algorithmic, 4 I/O.
  int exit_code() const {
    switch (kind_) {
      case ErrorKind::Config:
        return 2;
      case ErrorKind::Io:
        return 4;
      default:
        return 3;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace pudding
