#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "ngstyle/core.hpp"
#include "ngstyle/http_client.hpp"
#include "ngstyle/ngram.hpp"
#include "ngstyle/scaling.hpp"

namespace ngstyle {

// Next-token logits over a fixed vocabulary. Implementations are immutable
// after construction and logits() is safe to call concurrently.
class LogitSource {
 public:
  virtual ~LogitSource() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual const std::string& tokenizer_id() const = 0;
  virtual Logits logits(TokenView context) const = 0;
  virtual std::string descriptor() const = 0;
};

class UniformSource final : public LogitSource {
 public:
  UniformSource(std::size_t vocab_size, std::string tokenizer_id)
      : vocab_size_(vocab_size), tokenizer_id_(std::move(tokenizer_id)) {
    if (vocab_size == 0) throw UsageError("uniform source needs a nonempty vocabulary");
  }
  std::size_t vocab_size() const override { return vocab_size_; }
  const std::string& tokenizer_id() const override { return tokenizer_id_; }
  Logits logits(TokenView) const override { return Logits(vocab_size_, 0.0); }
  std::string descriptor() const override { return "uniform:" + std::to_string(vocab_size_); }

 private:
  std::size_t vocab_size_;
  std::string tokenizer_id_;
};

// Add-k smoothed ngram LM used as a stand-in base model. The distribution
// comes from the highest order whose context was seen in training; the
// unigram level always exists, so every token keeps probability > 0.
class ReferenceLm final : public LogitSource {
 public:
  ReferenceLm(TokenView tokens, int order, double add_k, std::size_t vocab_size, std::string tokenizer_id,
              std::string label = "builtin")
      : add_k_(add_k), tokenizer_id_(tokenizer_id), label_(std::move(label)) {
    if (order < 1 || order > NgramSet::kMaxSupportedOrder) throw UsageError("reference LM order must be in [1, 4]");
    if (!(add_k > 0.0) || !std::isfinite(add_k)) throw UsageError("reference LM add_k must be > 0");
    if (tokens.empty()) throw UsageError("reference LM needs a nonempty training corpus");
    set_ = train_set(tokens, order, vocab_size, tokenizer_id);
  }

  std::size_t vocab_size() const override { return set_.vocab_size(); }
  const std::string& tokenizer_id() const override { return tokenizer_id_; }
  const NgramSet& counts() const { return set_; }

  // Order that supplies the distribution for this context.
  int backoff_order(TokenView context) const {
    for (int k = set_.max_order(); k >= 1; --k) {
      const std::size_t len = static_cast<std::size_t>(k - 1);
      if (context.size() < len) continue;
      if (set_.model(k)->find(context.last(len))) return k;
    }
    return 0;
  }

  Logits logits(TokenView context) const override {
    const std::size_t vocab = vocab_size();
    const int k = backoff_order(context);
    if (k == 0) return Logits(vocab, 0.0);  // unreachable for a nonempty corpus
    const auto* c = set_.model(k)->find(context.last(static_cast<std::size_t>(k - 1)));
    const double denom = static_cast<double>(c->total) + add_k_ * static_cast<double>(vocab);
    const double floor = std::log(add_k_ / denom);
    Logits out(vocab, floor);
    for (const auto& [tok, n] : c->counts) {
      out[static_cast<std::size_t>(tok)] = std::log((static_cast<double>(n) + add_k_) / denom);
    }
    return out;
  }

  std::string descriptor() const override {
    char buf[64];
    std::snprintf(buf, sizeof buf, ":order=%d:k=%g", set_.max_order(), add_k_);
    return label_ + buf;
  }

 private:
  NgramSet set_;
  double add_k_;
  std::string tokenizer_id_;
  std::string label_;
};

inline std::unique_ptr<ReferenceLm> builtin_ref_lm(TokenView tokens, int order, double add_k, std::size_t vocab_size,
                                                   std::string tokenizer_id) {
  return std::make_unique<ReferenceLm>(tokens, order, add_k, vocab_size, std::move(tokenizer_id));
}

inline void require_compatible(const LogitSource& base, const NgramSet& set) {
  if (set.models().empty()) return;
  if (set.tokenizer_id() != base.tokenizer_id()) {
    throw ConfigError("tokenizer mismatch: ngrams use '" + set.tokenizer_id() + "', LM uses '" + base.tokenizer_id() +
                      "'");
  }
  if (set.vocab_size() != base.vocab_size()) {
    throw ConfigError("vocabulary mismatch: ngrams have " + std::to_string(set.vocab_size()) + ", LM has " +
                      std::to_string(base.vocab_size()));
  }
}

// base.logits(context) + scaling vector. Holds references; base and set must
// outlive it.
class ScaledLogitSource final : public LogitSource {
 public:
  ScaledLogitSource(const LogitSource& base, const NgramSet& set, WeightTuple weights, ScalingOptions opts = {})
      : base_(base), set_(set), weights_(weights), opts_(opts) {
    weights_.validate();
    require_compatible(base_, set_);
  }

  std::size_t vocab_size() const override { return base_.vocab_size(); }
  const std::string& tokenizer_id() const override { return base_.tokenizer_id(); }

  Logits logits(TokenView context) const override {
    auto s = build_scaling_vector(&set_, weights_, context, vocab_size(), opts_);
    return apply_scaling(base_.logits(context), s);
  }

  std::string descriptor() const override { return base_.descriptor() + "+w" + weights_.label(); }
  const WeightTuple& weights() const { return weights_; }

 private:
  const LogitSource& base_;
  const NgramSet& set_;
  WeightTuple weights_;
  ScalingOptions opts_;
};

// Remote LM over the wire protocol, with a bounded memo of recent contexts.
class HttpLogitSource final : public LogitSource {
 public:
  explicit HttpLogitSource(std::shared_ptr<const Endpoint> endpoint, std::size_t memo_capacity = 4096)
      : endpoint_(std::move(endpoint)), memo_capacity_(memo_capacity) {
    auto info = endpoint_->info();
    vocab_size_ = info.vocab_size;
    tokenizer_id_ = info.tokenizer_id;
  }

  std::size_t vocab_size() const override { return vocab_size_; }
  const std::string& tokenizer_id() const override { return tokenizer_id_; }
  std::string descriptor() const override { return endpoint_->config().url; }

  Logits logits(TokenView context) const override {
    TokenSeq key(context.begin(), context.end());
    if (memo_capacity_ > 0) {
      std::lock_guard lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    // Fetched outside the lock so workers do not serialize on the network.
    Logits out = endpoint_->logits(context, vocab_size_);
    if (memo_capacity_ > 0) {
      std::lock_guard lock(mu_);
      if (memo_.emplace(key, out).second) {
        order_.push_back(std::move(key));
        while (order_.size() > memo_capacity_) {
          memo_.erase(order_.front());
          order_.pop_front();
        }
      }
    }
    return out;
  }

  std::size_t memo_size() const {
    std::lock_guard lock(mu_);
    return memo_.size();
  }

 private:
  struct SeqHash {
    std::size_t operator()(const TokenSeq& s) const noexcept {
      std::uint64_t h = 1469598103934665603ull;
      for (TokenId t : s) {
        h ^= static_cast<std::uint32_t>(t);
        h *= 1099511628211ull;
      }
      return static_cast<std::size_t>(h);
    }
  };

  std::shared_ptr<const Endpoint> endpoint_;
  std::size_t vocab_size_ = 0;
  std::string tokenizer_id_;
  std::size_t memo_capacity_;
  mutable std::mutex mu_;
  mutable std::unordered_map<TokenSeq, Logits, SeqHash> memo_;
  mutable std::deque<TokenSeq> order_;
};

}  // namespace ngstyle
