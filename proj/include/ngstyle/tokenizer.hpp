#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "ngstyle/core.hpp"
#include "ngstyle/http_client.hpp"

namespace ngstyle {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual const std::string& tokenizer_id() const = 0;
  virtual TokenSeq encode(std::string_view text) const = 0;
  virtual std::string decode(TokenView tokens) const = 0;

  // Surface form of a single token, used for per-token rendering.
  virtual std::string piece(TokenId token) const { return decode(TokenView(&token, 1)); }
};

// One token per byte, plus two reserved ids. Hermetic and lossless for any
// byte string, so decode(encode(x)) == x always holds.
class ByteTokenizer final : public Tokenizer {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr std::size_t kVocabSize = 258;
  static inline const std::string kId = "builtin-bytes-v1";

  std::size_t vocab_size() const override { return kVocabSize; }
  const std::string& tokenizer_id() const override { return kId; }

  TokenSeq encode(std::string_view text) const override {
    TokenSeq out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
    return out;
  }

  // Reserved ids decode to nothing.
  std::string decode(TokenView tokens) const override {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
      if (t < 0 || t >= static_cast<TokenId>(kVocabSize)) {
        throw UsageError("byte tokenizer: token " + std::to_string(t) + " out of range");
      }
      if (t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
  }
};

// Delegates to the LM server's /v1/encode and /v1/decode so ngram models and
// the neural LM share one vocabulary.
class RemoteTokenizer final : public Tokenizer {
 public:
  explicit RemoteTokenizer(std::shared_ptr<const Endpoint> endpoint) : endpoint_(std::move(endpoint)) {
    auto info = endpoint_->info();
    vocab_size_ = info.vocab_size;
    id_ = info.tokenizer_id;
  }

  std::size_t vocab_size() const override { return vocab_size_; }
  const std::string& tokenizer_id() const override { return id_; }

  TokenSeq encode(std::string_view text) const override {
    auto tokens = endpoint_->encode(text);
    check_token_range(tokens, vocab_size_, "remote encode");
    return tokens;
  }

  std::string decode(TokenView tokens) const override { return endpoint_->decode(tokens); }

 private:
  std::shared_ptr<const Endpoint> endpoint_;
  std::size_t vocab_size_ = 0;
  std::string id_;
};

}  // namespace ngstyle
