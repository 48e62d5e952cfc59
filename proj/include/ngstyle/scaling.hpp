#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ngstyle/core.hpp"
#include "ngstyle/ngram.hpp"

namespace ngstyle {

// Per-order scaling strengths {f4, f3, f2, f1}. A zero entry removes that
// order from the backoff chain.
struct WeightTuple {
  std::array<double, 4> f{0.0, 0.0, 0.0, 0.0};  // f[0] = f4 ... f[3] = f1

  static WeightTuple of(double f4, double f3, double f2, double f1) { return WeightTuple{{f4, f3, f2, f1}}; }

  double for_order(int order) const {
    if (order < 1 || order > 4) return 0.0;
    return f[static_cast<std::size_t>(4 - order)];
  }
  bool all_zero() const { return std::all_of(f.begin(), f.end(), [](double x) { return x == 0.0; }); }
  double max() const { return *std::max_element(f.begin(), f.end()); }

  void validate() const {
    for (double x : f) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw UsageError("weights must be finite and non-negative");
    }
  }

  // "0021" when every weight is a single digit, "0,0,2.5,1" otherwise.
  std::string label() const {
    bool digits = std::all_of(f.begin(), f.end(), [](double x) { return x == std::floor(x) && x >= 0 && x <= 9; });
    std::string out;
    for (std::size_t i = 0; i < 4; ++i) {
      if (digits) {
        out += static_cast<char>('0' + static_cast<int>(f[i]));
      } else {
        if (i) out += ',';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", f[i]);
        out += buf;
      }
    }
    return out;
  }

  friend bool operator==(const WeightTuple&, const WeightTuple&) = default;
};

// Accepts "f4,f3,f2,f1" or a four-digit compact label such as "0021".
inline WeightTuple parse_weights(std::string_view s) {
  WeightTuple w;
  if (s.size() == 4 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    for (std::size_t i = 0; i < 4; ++i) w.f[i] = s[i] - '0';
    return w;
  }
  std::vector<double> parts;
  std::string item;
  std::istringstream in{std::string(s)};
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      double v = std::stod(item, &used);
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
      parts.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad weight '" + item + "' in '" + std::string(s) + "'");
    }
  }
  if (parts.size() != 4) throw UsageError("weights need exactly four values f4,f3,f2,f1: '" + std::string(s) + "'");
  std::copy(parts.begin(), parts.end(), w.f.begin());
  w.validate();
  return w;
}

inline constexpr double kProbCapGap = 1e-9;
inline constexpr double kProbCap = 1.0 - kProbCapGap;

// S = -f / ln(p). p is clamped to kProbCap so a certain continuation gives a
// large finite boost; p == 0 and f == 0 give no boost.
inline double scale_factor(double f, double p) {
  if (!(f >= 0.0) || !std::isfinite(f)) throw UsageError("scale_factor: f must be finite and >= 0");
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("scale_factor: p must lie in [0, 1]");
  if (f == 0.0 || p == 0.0) return 0.0;
  if (p >= kProbCap) return -f / std::log1p(-kProbCapGap);
  return -f / std::log(p);
}

struct ScalingOptions {
  // Each value is capped at cap_multiple * f. Non-positive disables the cap.
  double cap_multiple = 30.0;
};

struct ScalingVector {
  std::vector<double> values;
  int fired_order = 0;  // 0: no model fired
  std::vector<TokenId> source_support;

  static ScalingVector zeros(std::size_t vocab_size) { return ScalingVector{std::vector<double>(vocab_size, 0.0), 0, {}}; }
};

// Highest weighted order whose context (last k-1 tokens of history) was seen,
// or 0 if the chain is exhausted. Orders with zero weight or insufficient
// history are skipped.
inline int select_backoff_order(const NgramSet& set, const WeightTuple& w, TokenView history) {
  for (int k = std::min(set.max_order(), 4); k >= 1; --k) {
    if (w.for_order(k) == 0.0) continue;
    const std::size_t ctx_len = static_cast<std::size_t>(k - 1);
    if (history.size() < ctx_len) continue;
    const auto* model = set.model(k);
    if (model->find(history.last(ctx_len))) return k;
  }
  return 0;
}

inline ScalingVector build_scaling_vector(const NgramSet* set, const WeightTuple& w, TokenView history,
                                          std::size_t vocab_size, const ScalingOptions& opts = {}) {
  w.validate();
  if (!set || set->models().empty()) return ScalingVector::zeros(vocab_size);
  if (set->vocab_size() != vocab_size) {
    throw ConfigError("ngram set vocabulary (" + std::to_string(set->vocab_size()) + ") does not match LM vocabulary (" +
                      std::to_string(vocab_size) + ")");
  }
  ScalingVector out = ScalingVector::zeros(vocab_size);
  const int k = select_backoff_order(*set, w, history);
  if (k == 0) return out;

  const double f = w.for_order(k);
  const double cap = opts.cap_multiple > 0.0 ? opts.cap_multiple * f : INFINITY;
  const auto* model = set->model(k);
  const auto* counts = model->find(history.last(static_cast<std::size_t>(k - 1)));
  const double total = static_cast<double>(counts->total);
  out.fired_order = k;
  out.source_support.reserve(counts->counts.size());
  for (const auto& [tok, n] : counts->counts) {
    out.values[static_cast<std::size_t>(tok)] = std::min(scale_factor(f, static_cast<double>(n) / total), cap);
    out.source_support.push_back(tok);
  }
  return out;
}

inline ScalingVector build_scaling_vector(const NgramSet& set, const WeightTuple& w, TokenView history,
                                          std::size_t vocab_size, const ScalingOptions& opts = {}) {
  return build_scaling_vector(&set, w, history, vocab_size, opts);
}

inline Logits apply_scaling(std::span<const double> logits, const ScalingVector& s) {
  if (logits.size() != s.values.size()) {
    throw UsageError("apply_scaling: logits length " + std::to_string(logits.size()) + " != scaling length " +
                     std::to_string(s.values.size()));
  }
  Logits out(logits.begin(), logits.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s.values[i];
  return out;
}

}  // namespace ngstyle
