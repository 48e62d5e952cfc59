#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ngstyle/core.hpp"

namespace ngstyle {

// Sparse conditional distribution, sorted by token id.
using Distribution = std::vector<std::pair<TokenId, double>>;

namespace detail {

struct ContextLess {
  using is_transparent = void;
  template <class A, class B>
  bool operator()(const A& a, const B& b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

}  // namespace detail

// Exact (unsmoothed) counts of order-n windows, keyed by the n-1 token context.
class NgramModel {
 public:
  struct ContextCounts {
    std::vector<std::pair<TokenId, std::uint64_t>> counts;  // sorted by token, every count >= 1
    std::uint64_t total = 0;
  };
  using Table = std::map<TokenSeq, ContextCounts, detail::ContextLess>;

  NgramModel() = default;
  NgramModel(int order, std::size_t vocab_size, std::string tokenizer_id)
      : order_(order), vocab_size_(vocab_size), tokenizer_id_(std::move(tokenizer_id)) {
    if (order < 1) throw UsageError("ngram order must be >= 1");
  }

  int order() const { return order_; }
  std::size_t context_length() const { return static_cast<std::size_t>(order_ - 1); }
  std::size_t vocab_size() const { return vocab_size_; }
  const std::string& tokenizer_id() const { return tokenizer_id_; }
  const Table& table() const { return table_; }
  bool empty() const { return table_.empty(); }

  const ContextCounts* find(TokenView context) const {
    check_context(context);
    auto it = table_.find(context);
    return it == table_.end() ? nullptr : &it->second;
  }

  std::uint64_t count(TokenView context, TokenId token) const {
    const auto* c = find(context);
    if (!c) return 0;
    auto it = std::lower_bound(c->counts.begin(), c->counts.end(), token,
                               [](const auto& e, TokenId t) { return e.first < t; });
    return (it != c->counts.end() && it->first == token) ? it->second : 0;
  }

  // MLE p(token | context); nullopt means the context was never seen.
  std::optional<double> cond_prob(TokenView context, TokenId token) const {
    const auto* c = find(context);
    if (!c) return std::nullopt;
    return static_cast<double>(count(context, token)) / static_cast<double>(c->total);
  }

  std::optional<Distribution> predict(TokenView context) const {
    const auto* c = find(context);
    if (!c) return std::nullopt;
    Distribution d;
    d.reserve(c->counts.size());
    const double total = static_cast<double>(c->total);
    for (const auto& [tok, n] : c->counts) d.emplace_back(tok, static_cast<double>(n) / total);
    return d;
  }

  // Used by training and deserialization. Counts must be sorted, positive and in-vocabulary.
  void insert(TokenSeq context, ContextCounts counts) {
    if (context.size() != context_length()) throw FormatError("context length does not match model order");
    std::uint64_t total = 0;
    TokenId prev = -1;
    for (const auto& [tok, n] : counts.counts) {
      if (tok <= prev) throw FormatError("counts not strictly sorted by token id");
      if (static_cast<std::size_t>(tok) >= vocab_size_) throw FormatError("token id outside vocabulary");
      if (n == 0) throw FormatError("zero count stored");
      total += n;
      prev = tok;
    }
    if (counts.counts.empty()) throw FormatError("context with no continuations");
    counts.total = total;
    for (TokenId t : context) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) throw FormatError("context token outside vocabulary");
    }
    if (!table_.emplace(std::move(context), std::move(counts)).second) throw FormatError("duplicate context");
  }

  friend bool operator==(const NgramModel& a, const NgramModel& b) {
    if (a.order_ != b.order_ || a.vocab_size_ != b.vocab_size_ || a.tokenizer_id_ != b.tokenizer_id_) return false;
    if (a.table_.size() != b.table_.size()) return false;
    auto ib = b.table_.begin();
    for (const auto& [ctx, c] : a.table_) {
      if (ctx != ib->first || c.counts != ib->second.counts || c.total != ib->second.total) return false;
      ++ib;
    }
    return true;
  }

 private:
  void check_context(TokenView context) const {
    if (context.size() != context_length()) {
      throw UsageError("order-" + std::to_string(order_) + " model expects a context of " +
                       std::to_string(context_length()) + " tokens, got " + std::to_string(context.size()));
    }
  }

  int order_ = 1;
  std::size_t vocab_size_ = 0;
  std::string tokenizer_id_;
  Table table_;
};

inline NgramModel train(TokenView tokens, int order, std::size_t vocab_size, std::string tokenizer_id) {
  if (order < 1) throw UsageError("ngram order must be >= 1");
  check_token_range(tokens, vocab_size, "ngram train");
  NgramModel model(order, vocab_size, std::move(tokenizer_id));
  const std::size_t n = static_cast<std::size_t>(order);
  if (tokens.size() < n) return model;

  std::map<TokenSeq, std::map<TokenId, std::uint64_t>, detail::ContextLess> raw;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    auto ctx = tokens.subspan(i, n - 1);
    auto it = raw.find(ctx);
    if (it == raw.end()) it = raw.emplace(TokenSeq(ctx.begin(), ctx.end()), std::map<TokenId, std::uint64_t>{}).first;
    ++it->second[tokens[i + n - 1]];
  }
  for (auto& [ctx, counts] : raw) {
    NgramModel::ContextCounts cc;
    cc.counts.assign(counts.begin(), counts.end());
    model.insert(ctx, std::move(cc));
  }
  return model;
}

// The backoff stack {M_n, ..., M_1}, highest order first.
class NgramSet {
 public:
  static constexpr int kMaxSupportedOrder = 4;

  NgramSet() = default;

  explicit NgramSet(std::vector<NgramModel> models) : models_(std::move(models)) {
    if (models_.empty()) throw UsageError("ngram set needs at least one model");
    const int top = models_.front().order();
    if (top > kMaxSupportedOrder) throw UsageError("ngram set order above 4 is not supported");
    for (std::size_t i = 0; i < models_.size(); ++i) {
      if (models_[i].order() != top - static_cast<int>(i)) {
        throw UsageError("ngram set models must be strictly descending in order and end at order 1");
      }
      if (models_[i].vocab_size() != models_[0].vocab_size() ||
          models_[i].tokenizer_id() != models_[0].tokenizer_id()) {
        throw ConfigError("ngram set models disagree on vocabulary or tokenizer");
      }
    }
    if (models_.back().order() != 1) throw UsageError("ngram set must end at order 1");
  }

  int max_order() const { return models_.empty() ? 0 : models_.front().order(); }
  std::size_t vocab_size() const { return models_.empty() ? 0 : models_.front().vocab_size(); }
  const std::string& tokenizer_id() const {
    static const std::string none;
    return models_.empty() ? none : models_.front().tokenizer_id();
  }
  const std::vector<NgramModel>& models() const { return models_; }

  const NgramModel* model(int order) const {
    if (order < 1 || order > max_order()) return nullptr;
    return &models_[static_cast<std::size_t>(max_order() - order)];
  }

  friend bool operator==(const NgramSet& a, const NgramSet& b) { return a.models_ == b.models_; }

 private:
  std::vector<NgramModel> models_;
};

inline NgramSet train_set(TokenView tokens, int max_order, std::size_t vocab_size, const std::string& tokenizer_id) {
  if (max_order < 1 || max_order > NgramSet::kMaxSupportedOrder) {
    throw UsageError("ngram set order must be in [1, 4]");
  }
  std::vector<NgramModel> models;
  for (int k = max_order; k >= 1; --k) models.push_back(train(tokens, k, vocab_size, tokenizer_id));
  return NgramSet(std::move(models));
}

// ---------------------------------------------------------------------------
// Serialization: UTF-8 JSON lines.
//
//   {"magic":"ngstyle-ngrams","format_version":1,"max_order":N,"vocab_size":V,"tokenizer_id":"..."}
//   then per model, highest order first:
//   {"order":k,"vocab_size":V,"tokenizer_id":"...","contexts":C}
//   C x {"ctx":[ids],"counts":[[token,count],...]}
//
// Contexts are written in lexicographic order, counts by token id.

inline constexpr const char* kNgramMagic = "ngstyle-ngrams";
inline constexpr int kNgramFormatVersion = 1;

inline void save(const NgramSet& set, std::ostream& out) {
  nlohmann::ordered_json header;
  header["magic"] = kNgramMagic;
  header["format_version"] = kNgramFormatVersion;
  header["max_order"] = set.max_order();
  header["vocab_size"] = set.vocab_size();
  header["tokenizer_id"] = set.tokenizer_id();
  out << header.dump() << '\n';
  for (const auto& m : set.models()) {
    nlohmann::ordered_json mh;
    mh["order"] = m.order();
    mh["vocab_size"] = m.vocab_size();
    mh["tokenizer_id"] = m.tokenizer_id();
    mh["contexts"] = m.table().size();
    out << mh.dump() << '\n';
    for (const auto& [ctx, c] : m.table()) {
      nlohmann::ordered_json rec;
      rec["ctx"] = ctx;
      auto& counts = rec["counts"] = nlohmann::ordered_json::array();
      for (const auto& [tok, n] : c.counts) counts.push_back({tok, n});
      out << rec.dump() << '\n';
    }
  }
}

inline void save(const NgramSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  save(set, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline NgramSet load_ngrams(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](const char* expecting) -> nlohmann::json {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        return nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        // A torn final line reads as truncation rather than corruption.
        if (in.peek() == std::char_traits<char>::eof()) {
          throw TruncatedError("ngram file truncated at line " + std::to_string(lineno));
        }
        throw FormatError("ngram file line " + std::to_string(lineno) + " is not JSON");
      }
    }
    throw TruncatedError(std::string("ngram file truncated: expected ") + expecting);
  };

  nlohmann::json header;
  try {
    header = next("header");
  } catch (const TruncatedError&) {
    throw FormatError("empty ngram file");
  }
  if (!header.is_object() || header.value("magic", std::string()) != kNgramMagic) {
    throw FormatError("not an ngram file (bad magic header)");
  }
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kNgramFormatVersion) {
      throw VersionError("unsupported ngram format version " + std::to_string(version));
    }
    const int max_order = header.at("max_order").get<int>();
    const auto vocab = header.at("vocab_size").get<std::size_t>();
    const auto tid = header.at("tokenizer_id").get<std::string>();
    if (max_order < 1 || max_order > NgramSet::kMaxSupportedOrder) throw FormatError("bad max_order");

    std::vector<NgramModel> models;
    for (int k = max_order; k >= 1; --k) {
      auto mh = next("model header");
      if (mh.at("order").get<int>() != k) throw FormatError("model order out of sequence");
      NgramModel model(k, mh.at("vocab_size").get<std::size_t>(), mh.at("tokenizer_id").get<std::string>());
      if (model.vocab_size() != vocab || model.tokenizer_id() != tid) {
        throw FormatError("model header disagrees with file header");
      }
      const auto contexts = mh.at("contexts").get<std::size_t>();
      for (std::size_t c = 0; c < contexts; ++c) {
        auto rec = next("context record");
        NgramModel::ContextCounts cc;
        for (const auto& pair : rec.at("counts")) {
          cc.counts.emplace_back(pair.at(0).get<TokenId>(), pair.at(1).get<std::uint64_t>());
        }
        model.insert(rec.at("ctx").get<TokenSeq>(), std::move(cc));
      }
      models.push_back(std::move(model));
    }
    return NgramSet(std::move(models));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed ngram file: ") + e.what());
  }
}

inline NgramSet load_ngrams(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return load_ngrams(in);
}

}  // namespace ngstyle
