#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "ngstyle/core.hpp"
#include "ngstyle/decode.hpp"
#include "ngstyle/lm_source.hpp"
#include "ngstyle/scaling.hpp"

namespace ngstyle {

struct PerplexityReport {
  std::string label;
  double ppl = 0.0;
  std::size_t token_count = 0;
  std::size_t window = 32;
  std::size_t stride = 1;
  std::string source_descriptor;
  std::string weights;  // empty when unscaled
};

// First context token for position i. Windows of `window` tokens start at
// multiples of `stride`; each position is scored by the first window that
// reaches it, so stride 1 reduces to max(0, i - window + 1).
inline std::size_t context_begin(std::size_t i, std::size_t window, std::size_t stride) {
  if (i + 1 <= window) return 0;
  const std::size_t lo = i + 1 - window;
  return (lo + stride - 1) / stride * stride;
}

inline void check_window(std::size_t window, std::size_t stride) {
  if (window < 2) throw UsageError("perplexity window must be >= 2");
  if (stride < 1 || stride >= window) throw UsageError("perplexity stride must be in [1, window)");
}

// -ln softmax(logits)[target]
inline double token_nll(std::span<const double> logits, TokenId target, std::size_t position) {
  double mx = -INFINITY;
  for (double x : logits) {
    if (!std::isfinite(x)) throw EvaluationError("non-finite logit at position " + std::to_string(position));
    mx = std::max(mx, x);
  }
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return (mx + std::log(z)) - logits[static_cast<std::size_t>(target)];
}

// NLL of tokens[1..], each scored once against its capped left context.
inline std::vector<double> token_nlls(const LogitSource& source, TokenView tokens, std::size_t window = 32,
                                      std::size_t stride = 1) {
  check_window(window, stride);
  check_token_range(tokens, source.vocab_size(), "perplexity");
  std::vector<double> out;
  if (tokens.size() < 2) return out;
  out.reserve(tokens.size() - 1);
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::size_t b = context_begin(i, window, stride);
    auto logits = source.logits(tokens.subspan(b, i - b));
    if (logits.size() != source.vocab_size()) {
      throw EvaluationError("logits of wrong length at position " + std::to_string(i));
    }
    out.push_back(token_nll(logits, tokens[i], i));
  }
  return out;
}

inline double perplexity_of(std::span<const double> nlls) {
  if (nlls.empty()) throw EvaluationError("no tokens to score");
  double sum = 0.0;
  for (double x : nlls) sum += x;
  return std::exp(sum / static_cast<double>(nlls.size()));
}

inline PerplexityReport sliding_window_ppl(const LogitSource& source, TokenView tokens, std::size_t window = 32,
                                           std::size_t stride = 1, std::string label = {}) {
  if (tokens.size() < 2) throw UsageError("perplexity needs at least two tokens");
  auto nlls = token_nlls(source, tokens, window, stride);
  return {std::move(label), perplexity_of(nlls), nlls.size(), window, stride, source.descriptor(), {}};
}

// Pooled perplexity over generations. Each generation is scored from its own
// start; windows never span two generations.
inline PerplexityReport gppl(const std::vector<GenerationRecord>& generations, const LogitSource& eval_source,
                             std::size_t window = 32, std::size_t stride = 1, std::string label = {}) {
  if (generations.empty()) throw UsageError("gppl needs at least one generation");
  std::vector<double> pooled;
  for (const auto& g : generations) {
    auto nlls = token_nlls(eval_source, g.tokens, window, stride);
    pooled.insert(pooled.end(), nlls.begin(), nlls.end());
  }
  if (pooled.empty()) throw EvaluationError("gppl: generations too short to score");
  return {std::move(label), perplexity_of(pooled), pooled.size(), window, stride, eval_source.descriptor(), {}};
}

inline PerplexityReport rppl(TokenView target_tokens, const LogitSource& base_eval, const NgramSet& set,
                             const WeightTuple& w, std::size_t window = 32, std::size_t stride = 1,
                             std::string label = {}, const ScalingOptions& opts = {}) {
  ScaledLogitSource scaled(base_eval, set, w, opts);
  auto r = sliding_window_ppl(scaled, target_tokens, window, stride, std::move(label));
  r.source_descriptor = base_eval.descriptor();
  r.weights = w.label();
  return r;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline constexpr const char* kReportCsvHeader = "label,source_descriptor,weights,ppl,token_count,window,stride";

inline void write_report_csv(std::ostream& out, const std::vector<PerplexityReport>& reports) {
  out << kReportCsvHeader << '\n';
  for (const auto& r : reports) {
    out << csv_escape(r.label) << ',' << csv_escape(r.source_descriptor) << ',' << csv_escape(r.weights) << ','
        << format_double(r.ppl) << ',' << r.token_count << ',' << r.window << ',' << r.stride << '\n';
  }
}

}  // namespace ngstyle
