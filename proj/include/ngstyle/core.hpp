#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ngstyle {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using TokenView = std::span<const TokenId>;
using Logits = std::vector<double>;

// Error taxonomy. Everything derives from Error so callers that do not care
// about the distinction can catch once.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller violated a precondition (bad argument, wrong context length, ...).
struct UsageError : Error {
  using Error::Error;
};

// Inputs are individually valid but incompatible (vocab / tokenizer mismatch).
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct EncodingError : Error {
  using Error::Error;
};

struct TokenizerError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct VersionError : FormatError {
  using FormatError::FormatError;
};

struct TruncatedError : FormatError {
  using FormatError::FormatError;
};

struct EvaluationError : Error {
  using Error::Error;
};

// Remote LM failure. `attempts` is how many requests were made before giving up.
struct TransportError : Error {
  TransportError(const std::string& what, int attempts_made, int http_status = 0)
      : Error(what), attempts(attempts_made), status(http_status) {}
  int attempts;
  int status;
};

inline void check_token_range(TokenView tokens, std::size_t vocab_size, const char* who) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab_size) {
      throw UsageError(std::string(who) + ": token " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " outside vocabulary of size " + std::to_string(vocab_size));
    }
  }
}

}  // namespace ngstyle
