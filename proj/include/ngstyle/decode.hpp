#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ngstyle/core.hpp"
#include "ngstyle/lm_source.hpp"
#include "ngstyle/scaling.hpp"
#include "ngstyle/tokenizer.hpp"

namespace ngstyle {

enum class DecodeMode { greedy, sample };

inline std::string to_string(DecodeMode m) { return m == DecodeMode::greedy ? "greedy" : "sample"; }

inline DecodeMode parse_mode(std::string_view s) {
  if (s == "greedy") return DecodeMode::greedy;
  if (s == "sample") return DecodeMode::sample;
  throw UsageError("unknown mode '" + std::string(s) + "' (expected greedy|sample)");
}

// std::mt19937_64 has a fully specified output sequence; uniform draws take
// the top 53 bits so replays match across standard libraries.
inline constexpr const char* kRngId = "mt19937_64/u53";

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp((logits[i] - mx) / temperature));
  for (double& x : p) x /= z;
  return p;
}

// First maximum, i.e. ties go to the lowest token id.
inline TokenId argmax(std::span<const double> v) {
  return static_cast<TokenId>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline TokenId sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_nonzero = i;
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_nonzero);  // rounding left u >= sum
}

struct GenerationRecord {
  std::string prompt_id;
  WeightTuple weights;
  DecodeMode mode = DecodeMode::greedy;
  std::uint64_t seed = 0;
  std::string rng = kRngId;
  double temperature = 1.0;
  TokenSeq tokens;                // generated only, prompt excluded
  std::vector<int> provenance;    // fired order per generated token
  std::string text;
};

struct GenerateOptions {
  std::string prompt_id;
  DecodeMode mode = DecodeMode::greedy;
  std::size_t max_len = 256;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  std::optional<TokenId> eos;
  ScalingOptions scaling;
  const Tokenizer* tokenizer = nullptr;  // fills GenerationRecord::text when set
};

// Thrown when the base source fails mid-generation; carries what was produced.
struct GenerationError : Error {
  GenerationError(const std::string& what, GenerationRecord partial_record)
      : Error(what), partial(std::move(partial_record)) {}
  GenerationRecord partial;
};

inline GenerationRecord generate(const LogitSource& base, const NgramSet* set, const WeightTuple& w,
                                 TokenView prompt_ids, const GenerateOptions& opts) {
  if (prompt_ids.empty()) throw UsageError("generate: prompt is empty");
  if (opts.max_len < 1) throw UsageError("generate: max_len must be >= 1");
  if (!(opts.temperature > 0.0)) throw UsageError("generate: temperature must be > 0");
  w.validate();
  const std::size_t vocab = base.vocab_size();
  check_token_range(prompt_ids, vocab, "generate prompt");
  if (set) require_compatible(base, *set);

  GenerationRecord rec;
  rec.prompt_id = opts.prompt_id;
  rec.weights = w;
  rec.mode = opts.mode;
  rec.seed = opts.seed;
  rec.temperature = opts.temperature;
  rec.tokens.reserve(opts.max_len);
  rec.provenance.reserve(opts.max_len);

  Rng rng(opts.seed);
  TokenSeq history(prompt_ids.begin(), prompt_ids.end());
  history.reserve(prompt_ids.size() + opts.max_len);

  while (rec.tokens.size() < opts.max_len) {
    Logits logits;
    try {
      logits = base.logits(history);
    } catch (const Error& e) {
      if (opts.tokenizer) rec.text = opts.tokenizer->decode(rec.tokens);
      throw GenerationError(std::string("generation of '") + opts.prompt_id + "' failed at step " +
                                std::to_string(rec.tokens.size()) + ": " + e.what(),
                            std::move(rec));
    }
    if (logits.size() != vocab) throw ConfigError("base LM returned a logits vector of the wrong length");

    auto s = build_scaling_vector(set, w, history, vocab, opts.scaling);
    auto scaled = apply_scaling(logits, s);

    TokenId next;
    if (opts.mode == DecodeMode::greedy) {
      next = argmax(scaled);
    } else {
      next = sample_categorical(softmax(scaled, opts.temperature), rng);
    }
    if (opts.eos && next == *opts.eos) break;
    rec.tokens.push_back(next);
    rec.provenance.push_back(s.fired_order);
    history.push_back(next);
  }
  if (opts.tokenizer) rec.text = opts.tokenizer->decode(rec.tokens);
  return rec;
}

// The greedy and sampled runs for one prompt, sharing all other inputs.
inline std::pair<GenerationRecord, GenerationRecord> generate_conditions(const LogitSource& base, const NgramSet* set,
                                                                         const WeightTuple& w, TokenView prompt_ids,
                                                                         GenerateOptions opts) {
  opts.mode = DecodeMode::greedy;
  auto greedy = generate(base, set, w, prompt_ids, opts);
  opts.mode = DecodeMode::sample;
  auto sampled = generate(base, set, w, prompt_ids, opts);
  return {std::move(greedy), std::move(sampled)};
}

// ---------------------------------------------------------------------------
// JSONL records

inline nlohmann::ordered_json to_json(const GenerationRecord& r) {
  nlohmann::ordered_json j;
  j["prompt_id"] = r.prompt_id;
  j["weights"] = r.weights.f;
  j["mode"] = to_string(r.mode);
  j["seed"] = r.seed;
  j["rng"] = r.rng;
  j["temperature"] = r.temperature;
  j["tokens"] = r.tokens;
  j["provenance"] = r.provenance;
  j["text"] = r.text;
  return j;
}

inline GenerationRecord generation_from_json(const nlohmann::json& j) {
  try {
    GenerationRecord r;
    r.prompt_id = j.at("prompt_id").get<std::string>();
    auto f = j.at("weights").get<std::vector<double>>();
    if (f.size() != 4) throw FormatError("generation record weights must have four entries");
    std::copy(f.begin(), f.end(), r.weights.f.begin());
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.seed = j.value("seed", std::uint64_t{0});
    r.rng = j.value("rng", std::string(kRngId));
    r.temperature = j.value("temperature", 1.0);
    r.tokens = j.at("tokens").get<TokenSeq>();
    r.provenance = j.at("provenance").get<std::vector<int>>();
    r.text = j.value("text", std::string());
    if (r.provenance.size() != r.tokens.size()) throw FormatError("provenance length differs from token count");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad generation record: ") + e.what());
  }
}

inline void write_generations_jsonl(std::ostream& out, const std::vector<GenerationRecord>& records) {
  // Sampled byte tokens can split a character; text gets U+FFFD there, tokens stay exact.
  for (const auto& r : records) out << to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

inline std::vector<GenerationRecord> read_generations_jsonl(std::istream& in) {
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(generation_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("generation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ngstyle
