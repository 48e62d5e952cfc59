#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ngstyle/core.hpp"
#include "ngstyle/tokenizer.hpp"

namespace ngstyle {

enum class Casing { lower, upper, preserve };
enum class CorpusKind { full_text, extracted_dialogue, baseline };

inline Casing parse_casing(std::string_view s) {
  if (s == "lower") return Casing::lower;
  if (s == "upper") return Casing::upper;
  if (s == "preserve") return Casing::preserve;
  throw UsageError("unknown casing '" + std::string(s) + "' (expected lower|upper|preserve)");
}

inline CorpusKind parse_corpus_kind(std::string_view s) {
  if (s == "full_text") return CorpusKind::full_text;
  if (s == "extracted_dialogue") return CorpusKind::extracted_dialogue;
  if (s == "baseline") return CorpusKind::baseline;
  throw UsageError("unknown corpus kind '" + std::string(s) + "'");
}

struct CorpusSpec {
  std::string label;
  std::string path;
  Casing casing = Casing::preserve;
  CorpusKind kind = CorpusKind::full_text;
};

class CorpusRegistry {
 public:
  void add(CorpusSpec spec) {
    if (spec.label.empty()) throw UsageError("corpus label must be nonempty");
    if (find(spec.label)) throw UsageError("duplicate corpus label '" + spec.label + "'");
    specs_.push_back(std::move(spec));
  }

  const CorpusSpec* find(std::string_view label) const {
    auto it = std::find_if(specs_.begin(), specs_.end(), [&](const CorpusSpec& s) { return s.label == label; });
    return it == specs_.end() ? nullptr : &*it;
  }

  const std::vector<CorpusSpec>& specs() const { return specs_; }

 private:
  std::vector<CorpusSpec> specs_;
};

// Offset of the first byte that breaks UTF-8 well-formedness, if any.
// Rejects overlongs, surrogates and code points above U+10FFFF.
inline std::optional<std::size_t> find_invalid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  const std::size_t n = s.size();
  std::size_t i = 0;
  while (i < n) {
    unsigned char c = p[i];
    if (c < 0x80) {
      ++i;
      continue;
    }
    std::size_t len;
    unsigned lo = 0x80, hi = 0xBF;
    if (c >= 0xC2 && c <= 0xDF) {
      len = 2;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
      if (c == 0xE0) lo = 0xA0;
      if (c == 0xED) hi = 0x9F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
      if (c == 0xF0) lo = 0x90;
      if (c == 0xF4) hi = 0x8F;
    } else {
      return i;
    }
    if (i + len > n) return i;
    if (p[i + 1] < lo || p[i + 1] > hi) return i;
    for (std::size_t k = 2; k < len; ++k) {
      if ((p[i + k] & 0xC0) != 0x80) return i;
    }
    i += len;
  }
  return std::nullopt;
}

// ASCII case mapping over the whole document; non-ASCII bytes pass through.
inline std::string normalize_casing(std::string_view text, Casing casing) {
  std::string out(text);
  if (casing == Casing::lower) {
    for (char& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
  } else if (casing == Casing::upper) {
    for (char& c : out) {
      if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return ss.str();
}

inline std::string read_utf8_file(const std::string& path) {
  auto text = read_text_file(path);
  if (auto bad = find_invalid_utf8(text)) {
    throw EncodingError("'" + path + "' is not valid UTF-8 (byte offset " + std::to_string(*bad) + ")");
  }
  return text;
}

inline TokenSeq tokenize(const Tokenizer& tok, std::string_view text) {
  try {
    return tok.encode(text);
  } catch (const TransportError& e) {
    throw TokenizerError(std::string("tokenizer '") + tok.tokenizer_id() + "' failed: " + e.what());
  } catch (const FormatError& e) {
    throw TokenizerError(std::string("tokenizer '") + tok.tokenizer_id() + "' failed: " + e.what());
  }
}

inline TokenSeq load_corpus(const CorpusSpec& spec, const Tokenizer& tok) {
  auto text = read_utf8_file(spec.path);
  if (text.empty()) return {};
  return tokenize(tok, normalize_casing(text, spec.casing));
}

// ---------------------------------------------------------------------------
// Prompt sets

enum class TemplateKind { stem_only, position, author, character };

inline std::string to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::stem_only: return "stem_only";
    case TemplateKind::position: return "position";
    case TemplateKind::author: return "author";
    case TemplateKind::character: return "character";
  }
  return "?";
}

inline TemplateKind parse_template_kind(std::string_view s) {
  if (s == "stem_only") return TemplateKind::stem_only;
  if (s == "position") return TemplateKind::position;
  if (s == "author") return TemplateKind::author;
  if (s == "character") return TemplateKind::character;
  throw UsageError("unknown template '" + std::string(s) + "' (expected position|author|character)");
}

struct PromptTemplate {
  TemplateKind kind;
  std::string format;  // "{placeholder}" syntax
};

struct PromptRecord {
  std::string id;
  std::string raw_prompt;
  TemplateKind template_kind = TemplateKind::stem_only;
  std::string rendered;
  TokenSeq token_ids;
};

inline constexpr const char* kDefaultStem = "Write a few sentences based on the following story prompt";

// Replaces every {name} in `format`. Unknown names are an error naming the
// placeholder; a lone '{' without a closing brace is kept literally.
inline std::string substitute_placeholders(std::string_view format, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < format.size()) {
    if (format[i] == '{') {
      auto close = format.find('}', i + 1);
      if (close != std::string_view::npos) {
        std::string name(format.substr(i + 1, close - i - 1));
        auto it = vars.find(name);
        if (it == vars.end()) throw UsageError("unresolved placeholder {" + name + "}");
        out += it->second;
        i = close + 1;
        continue;
      }
    }
    out.push_back(format[i++]);
  }
  return out;
}

inline std::string render_stem_only(std::string_view stem, std::string_view prompt) {
  return "[INST]" + std::string(stem) + ": " + std::string(prompt) + " [/INST]";
}

inline std::string render_control(std::string_view template_text, std::string_view stem, std::string_view prompt) {
  return "[INST] " + std::string(template_text) + " " + std::string(stem) + ": " + std::string(prompt) + ": [/INST]";
}

// N stem-only records followed by N x T control records, prompt-major within
// each block.
inline std::vector<PromptRecord> build_prompt_sets(const std::vector<std::string>& wp_prompts, std::string_view stem,
                                                   const std::vector<PromptTemplate>& templates,
                                                   const std::map<std::string, std::string>& variables,
                                                   const Tokenizer& tok) {
  std::vector<std::string> template_texts;
  template_texts.reserve(templates.size());
  for (const auto& t : templates) template_texts.push_back(substitute_placeholders(t.format, variables));

  std::vector<PromptRecord> out;
  out.reserve(wp_prompts.size() * (1 + templates.size()));
  auto make = [&](std::size_t i, TemplateKind kind, std::string rendered) {
    PromptRecord r;
    r.id = "wp" + std::to_string(i) + "/" + to_string(kind);
    r.raw_prompt = wp_prompts[i];
    r.template_kind = kind;
    r.token_ids = tokenize(tok, rendered);
    r.rendered = std::move(rendered);
    out.push_back(std::move(r));
  };
  for (std::size_t i = 0; i < wp_prompts.size(); ++i) make(i, TemplateKind::stem_only, render_stem_only(stem, wp_prompts[i]));
  for (std::size_t i = 0; i < wp_prompts.size(); ++i) {
    for (std::size_t k = 0; k < templates.size(); ++k) {
      make(i, templates[k].kind, render_control(template_texts[k], stem, wp_prompts[i]));
    }
  }
  return out;
}

// One prompt per line; trailing '\r' is dropped, blank lines skipped, and
// literal "<newline>" markers are kept as-is.
inline std::vector<std::string> read_prompt_lines(const std::string& path) {
  auto text = read_utf8_file(path);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(line);
  }
  return out;
}

// Template file: JSON object, template name -> format string. File order is kept.
inline std::vector<PromptTemplate> load_templates(const std::string& path) {
  auto text = read_utf8_file(path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("template file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw FormatError("template file '" + path + "' must be a JSON object");
  std::vector<PromptTemplate> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw FormatError("template '" + it.key() + "' is not a string");
    out.push_back({parse_template_kind(it.key()), it.value().get<std::string>()});
  }
  return out;
}

inline std::map<std::string, std::string> load_variables(const std::string& path) {
  auto text = read_utf8_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("variables file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw FormatError("variables file '" + path + "' must be a JSON object");
  std::map<std::string, std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw FormatError("variable '" + it.key() + "' is not a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

inline nlohmann::ordered_json to_json(const PromptRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["template"] = to_string(r.template_kind);
  j["raw_prompt"] = r.raw_prompt;
  j["rendered"] = r.rendered;
  j["token_ids"] = r.token_ids;
  return j;
}

inline PromptRecord prompt_from_json(const nlohmann::json& j) {
  try {
    PromptRecord r;
    r.id = j.at("id").get<std::string>();
    r.template_kind = parse_template_kind(j.at("template").get<std::string>());
    r.raw_prompt = j.value("raw_prompt", std::string());
    r.rendered = j.at("rendered").get<std::string>();
    r.token_ids = j.at("token_ids").get<TokenSeq>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad prompt record: ") + e.what());
  }
}

inline void write_prompts_jsonl(std::ostream& out, const std::vector<PromptRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<PromptRecord> read_prompts_jsonl(std::istream& in) {
  std::vector<PromptRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prompt_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("prompt line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ngstyle
