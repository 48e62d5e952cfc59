#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ngstyle/core.hpp"
#include "ngstyle/corpus.hpp"
#include "ngstyle/decode.hpp"
#include "ngstyle/eval.hpp"
#include "ngstyle/lm_source.hpp"
#include "ngstyle/scaling.hpp"

namespace ngstyle {

// Runs fn(0..n-1) on up to `workers` threads. The first exception thrown by
// any job is rethrown after all threads join.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed for one (prompt, weights, mode) cell; independent of scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view prompt_id, const WeightTuple& w,
                                 DecodeMode mode) {
  std::string key;
  key.append(prompt_id).append("\x1f").append(w.label()).append("\x1f").append(to_string(mode));
  return splitmix64(master ^ fnv1a64(key));
}

struct SweepRow {
  WeightTuple weights;
  DecodeMode mode = DecodeMode::greedy;
  double gppl = NAN;
  double rppl = NAN;
  double target_ppl = NAN;
  double gap = NAN;  // |target_ppl - gppl|
  std::size_t n_generations = 0;
  bool ok = true;
  std::string error;
};

struct SweepConfig {
  std::vector<WeightTuple> weights;
  std::vector<DecodeMode> modes{DecodeMode::greedy, DecodeMode::sample};
  std::size_t max_len = 256;
  std::uint64_t master_seed = 0;
  std::size_t window = 32;
  std::size_t stride = 1;
  std::size_t workers = 1;
  double temperature = 1.0;
  std::optional<TokenId> eos;
  ScalingOptions scaling;
  const Tokenizer* tokenizer = nullptr;
};

struct SweepResult {
  std::vector<SweepRow> rows;                 // sorted by (mode, weight label)
  std::vector<GenerationRecord> records;      // same order, prompts in input order within a cell
  PerplexityReport target;
};

inline bool cell_less(DecodeMode ma, const WeightTuple& wa, DecodeMode mb, const WeightTuple& wb) {
  auto sa = to_string(ma), sb = to_string(mb);
  if (sa != sb) return sa < sb;
  return wa.label() < wb.label();
}

inline bool row_less(const SweepRow& a, const SweepRow& b) { return cell_less(a.mode, a.weights, b.mode, b.weights); }

inline SweepResult run_sweep(const std::vector<PromptRecord>& prompts, const LogitSource& base,
                             const LogitSource& eval_source, const NgramSet& set, TokenView target_tokens,
                             const SweepConfig& cfg) {
  if (prompts.empty()) throw UsageError("sweep needs at least one prompt");
  if (cfg.weights.empty()) throw UsageError("sweep needs at least one weight tuple");
  if (cfg.modes.empty()) throw UsageError("sweep needs at least one mode");
  {
    std::set<std::string> seen;
    for (const auto& w : cfg.weights) {
      w.validate();
      if (!seen.insert(w.label()).second) throw UsageError("duplicate weight tuple " + w.label());
    }
  }
  require_compatible(base, set);
  require_compatible(eval_source, set);
  check_window(cfg.window, cfg.stride);

  // Cell order is the output order.
  struct Cell {
    DecodeMode mode;
    std::size_t weight_index;
  };
  std::vector<Cell> cells;
  for (auto m : cfg.modes) {
    for (std::size_t wi = 0; wi < cfg.weights.size(); ++wi) cells.push_back({m, wi});
  }
  std::sort(cells.begin(), cells.end(), [&](const Cell& a, const Cell& b) {
    return cell_less(a.mode, cfg.weights[a.weight_index], b.mode, cfg.weights[b.weight_index]);
  });

  SweepResult result;
  result.target = sliding_window_ppl(eval_source, target_tokens, cfg.window, cfg.stride, "target");

  const std::size_t np = prompts.size();
  const std::size_t nw = cfg.weights.size();
  const std::size_t n_gen = cells.size() * np;

  std::vector<GenerationRecord> gens(n_gen);
  std::vector<std::string> gen_errors(n_gen);
  std::vector<double> rppl_values(nw, NAN);
  std::vector<std::string> rppl_errors(nw);

  // Phase 1: every generation and every rPPL are independent jobs.
  parallel_for(n_gen + nw, cfg.workers, [&](std::size_t job) {
    if (job >= n_gen) {
      const std::size_t wi = job - n_gen;
      try {
        rppl_values[wi] = rppl(target_tokens, eval_source, set, cfg.weights[wi], cfg.window, cfg.stride, "target",
                               cfg.scaling)
                              .ppl;
      } catch (const std::exception& e) {
        rppl_errors[wi] = e.what();
      }
      return;
    }
    const auto& cell = cells[job / np];
    const auto& prompt = prompts[job % np];
    const auto& w = cfg.weights[cell.weight_index];
    GenerateOptions opts;
    opts.prompt_id = prompt.id;
    opts.mode = cell.mode;
    opts.max_len = cfg.max_len;
    opts.seed = derive_seed(cfg.master_seed, prompt.id, w, cell.mode);
    opts.temperature = cfg.temperature;
    opts.eos = cfg.eos;
    opts.scaling = cfg.scaling;
    opts.tokenizer = cfg.tokenizer;
    try {
      gens[job] = generate(base, &set, w, prompt.token_ids, opts);
    } catch (const GenerationError& e) {
      gens[job] = e.partial;
      gen_errors[job] = e.what();
    } catch (const std::exception& e) {
      gens[job].prompt_id = prompt.id;
      gens[job].weights = w;
      gens[job].mode = cell.mode;
      gen_errors[job] = e.what();
    }
  });

  // Phase 2: pooled gPPL per cell.
  result.rows.resize(cells.size());
  parallel_for(cells.size(), cfg.workers, [&](std::size_t ci) {
    const auto& cell = cells[ci];
    SweepRow& row = result.rows[ci];
    row.weights = cfg.weights[cell.weight_index];
    row.mode = cell.mode;
    row.target_ppl = result.target.ppl;
    row.n_generations = np;
    row.rppl = rppl_values[cell.weight_index];
    std::vector<std::string> errors;
    if (!rppl_errors[cell.weight_index].empty()) errors.push_back("rppl: " + rppl_errors[cell.weight_index]);
    for (std::size_t p = 0; p < np; ++p) {
      if (!gen_errors[ci * np + p].empty()) errors.push_back(gen_errors[ci * np + p]);
    }
    if (errors.empty()) {
      try {
        std::vector<GenerationRecord> cell_gens(gens.begin() + static_cast<std::ptrdiff_t>(ci * np),
                                                gens.begin() + static_cast<std::ptrdiff_t>((ci + 1) * np));
        row.gppl = gppl(cell_gens, eval_source, cfg.window, cfg.stride).ppl;
        row.gap = std::abs(row.target_ppl - row.gppl);
      } catch (const std::exception& e) {
        errors.push_back(std::string("gppl: ") + e.what());
      }
    }
    if (!errors.empty()) {
      row.ok = false;
      row.error = errors.front();
      if (errors.size() > 1) row.error += " (+" + std::to_string(errors.size() - 1) + " more)";
    }
  });

  result.records = std::move(gens);
  return result;
}

// ---------------------------------------------------------------------------
// Pareto selection: minimize gap and rPPL jointly.

struct SelectionResult {
  std::vector<SweepRow> pareto_front;  // gap ascending
  std::vector<SweepRow> dominated;
};

inline bool dominates(const SweepRow& a, const SweepRow& b) {
  return a.gap <= b.gap && a.rppl <= b.rppl && (a.gap < b.gap || a.rppl < b.rppl);
}

// Failed rows are left out of both partitions.
inline SelectionResult select_optimal(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw UsageError("select_optimal needs at least one row");
  std::vector<const SweepRow*> sorted;
  for (const auto& r : rows) {
    if (r.ok) sorted.push_back(&r);
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const SweepRow* a, const SweepRow* b) {
    if (a->gap != b->gap) return a->gap < b->gap;
    if (a->rppl != b->rppl) return a->rppl < b->rppl;
    return row_less(*a, *b);
  });

  SelectionResult out;
  double best_before = INFINITY;  // min rPPL over strictly smaller gaps
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j]->gap == sorted[i]->gap) ++j;
    const double group_min = sorted[i]->rppl;
    for (std::size_t k = i; k < j; ++k) {
      const bool front = sorted[k]->rppl == group_min && group_min < best_before;
      (front ? out.pareto_front : out.dominated).push_back(*sorted[k]);
    }
    best_before = std::min(best_before, group_min);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kSweepCsvHeader =
    "mode,weights,f4,f3,f2,f1,gppl,rppl,target_ppl,gap,n_generations,status,error";

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    out << to_string(r.mode) << ',' << csv_escape(r.weights.label());
    for (double f : r.weights.f) out << ',' << format_double(f);
    out << ',' << format_double(r.gppl) << ',' << format_double(r.rppl) << ',' << format_double(r.target_ppl) << ','
        << format_double(r.gap) << ',' << r.n_generations << ',' << (r.ok ? "ok" : "failed") << ','
        << csv_escape(r.error) << '\n';
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty sweep CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSweepCsvHeader) throw FormatError("unexpected sweep CSV header");
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 13) throw FormatError("sweep CSV line " + std::to_string(lineno) + ": expected 13 fields");
    try {
      SweepRow r;
      r.mode = parse_mode(f[0]);
      for (std::size_t k = 0; k < 4; ++k) r.weights.f[k] = std::stod(f[2 + k]);
      r.gppl = std::stod(f[6]);
      r.rppl = std::stod(f[7]);
      r.target_ppl = std::stod(f[8]);
      r.gap = std::stod(f[9]);
      r.n_generations = std::stoul(f[10]);
      r.ok = f[11] == "ok";
      r.error = f[12];
      rows.push_back(std::move(r));
    } catch (const std::invalid_argument&) {
      throw FormatError("sweep CSV line " + std::to_string(lineno) + ": bad number");
    } catch (const std::out_of_range&) {
      throw FormatError("sweep CSV line " + std::to_string(lineno) + ": number out of range");
    }
  }
  return rows;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

// Scatter of gap (x) against rPPL (y), one <circle class="point ..."> per
// successful row; Pareto-front points carry the extra class "front".
inline void write_scatter_svg(std::ostream& out, const std::vector<SweepRow>& rows, std::string_view title = {}) {
  constexpr double W = 720, H = 480, L = 70, R = 30, T = 40, B = 60;
  std::vector<const SweepRow*> pts;
  for (const auto& r : rows) {
    if (r.ok && std::isfinite(r.gap) && std::isfinite(r.rppl)) pts.push_back(&r);
  }
  std::set<std::string> front_keys;
  if (!pts.empty()) {
    std::vector<SweepRow> ok_rows;
    for (const auto* p : pts) ok_rows.push_back(*p);
    for (const auto& r : select_optimal(ok_rows).pareto_front) front_keys.insert(to_string(r.mode) + r.weights.label());
  }
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0]->gap;
    y0 = y1 = pts[0]->rppl;
    for (const auto* p : pts) {
      x0 = std::min(x0, p->gap), x1 = std::max(x1, p->gap);
      y0 = std::min(y0, p->rppl), y1 = std::max(y1, p->rppl);
    }
    const double px = (x1 - x0) > 0 ? 0.05 * (x1 - x0) : 1.0;
    const double py = (y1 - y0) > 0 ? 0.05 * (y1 - y0) : 1.0;
    x0 -= px, x1 += px, y0 -= py, y1 += py;
  }
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
  out << "<style>.point{fill:#4a78b5;stroke:none}.point.front{fill:#d1495b;stroke:#000;stroke-width:1}"
         ".label{font:10px sans-serif;fill:#333}.axis{stroke:#000}.title{font:14px sans-serif}</style>\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
  if (!title.empty()) out << "<text class=\"title\" x=\"" << L << "\" y=\"24\">" << xml_escape(title) << "</text>\n";
  out << "<line class=\"axis\" x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\"/>\n";
  out << "<line class=\"axis\" x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\"/>\n";
  out << "<text class=\"label\" x=\"" << (W - R + L) / 2 - 60 << "\" y=\"" << H - 20 << "\">abs(PPL - gPPL)</text>\n";
  out << "<text class=\"label\" transform=\"translate(20," << (H - B + T) / 2 + 20 << ") rotate(-90)\">rPPL</text>\n";
  out << "<text class=\"label\" x=\"" << L << "\" y=\"" << H - B + 14 << "\">" << num(x0) << "</text>\n";
  out << "<text class=\"label\" x=\"" << W - R - 30 << "\" y=\"" << H - B + 14 << "\">" << num(x1) << "</text>\n";
  out << "<text class=\"label\" x=\"4\" y=\"" << H - B << "\">" << num(y0) << "</text>\n";
  out << "<text class=\"label\" x=\"4\" y=\"" << T + 4 << "\">" << num(y1) << "</text>\n";
  for (const auto* p : pts) {
    const bool front = front_keys.count(to_string(p->mode) + p->weights.label()) > 0;
    const std::string label = p->weights.label() + (rows.size() > 1 ? " " + to_string(p->mode) : "");
    out << "<circle class=\"point" << (front ? " front" : "") << "\" cx=\"" << num(sx(p->gap)) << "\" cy=\""
        << num(sy(p->rppl)) << "\" r=\"5\"><title>" << xml_escape(label) << " gap=" << num(p->gap)
        << " rPPL=" << num(p->rppl) << "</title></circle>\n";
    out << "<text class=\"label\" x=\"" << num(sx(p->gap) + 7) << "\" y=\"" << num(sy(p->rppl) - 7) << "\">"
        << xml_escape(label) << "</text>\n";
  }
  out << "</svg>\n";
}

// Table-style token colouring: each token span carries class order-k for the
// ngram order that scaled it (0 = unscaled).
inline void write_provenance_html(std::ostream& out, const std::vector<GenerationRecord>& records,
                                  const Tokenizer& tok) {
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Scaling provenance</title>\n<style>\n"
         "body{font-family:sans-serif;max-width:60em;margin:2em auto}\n"
         ".gen{white-space:pre-wrap;font-family:monospace;border:1px solid #ccc;padding:.5em;margin-bottom:1.5em}\n"
         ".order-0{}\n.order-1{background:#b7e4b0}\n.order-2{background:#a8c8f0}\n"
         ".order-3{background:#f7c08a}\n.order-4{background:#d3b5e8}\n"
         "</style></head><body>\n"
         "<p>Legend: <span class=\"tok order-1\">unigram</span> <span class=\"tok order-2\">bigram</span> "
         "<span class=\"tok order-3\">trigram</span> <span class=\"tok order-4\">4-gram</span> unscaled</p>\n";
  for (const auto& r : records) {
    out << "<h3>" << xml_escape(r.prompt_id) << " &middot; w=" << xml_escape(r.weights.label()) << " &middot; "
        << to_string(r.mode) << "</h3>\n<div class=\"gen\">";
    // Tokens that split a multi-byte character are merged into one span, coloured by its first token.
    std::string pending;
    int pending_order = 0;
    auto flush = [&] {
      if (pending.empty()) return;
      out << "<span class=\"tok order-" << pending_order << "\">" << xml_escape(pending) << "</span>";
      pending.clear();
    };
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      if (pending.empty()) pending_order = r.provenance[i];
      pending += tok.piece(r.tokens[i]);
      auto bad = find_invalid_utf8(pending);
      const bool incomplete = bad.has_value() && pending.size() - *bad < 4 && i + 1 < r.tokens.size();
      if (!incomplete) flush();
    }
    flush();
    out << "</div>\n";
  }
  out << "</body></html>\n";
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

// sweep.csv, scatter.svg and provenance.html under out_dir.
inline void emit_reports(const std::vector<SweepRow>& rows, const std::vector<GenerationRecord>& records,
                         const std::filesystem::path& out_dir, const Tokenizer& tok, std::string_view title = {}) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  {
    auto out = open_output(out_dir / "sweep.csv");
    write_sweep_csv(out, rows);
  }
  {
    auto out = open_output(out_dir / "scatter.svg");
    write_scatter_svg(out, rows, title);
  }
  {
    auto out = open_output(out_dir / "provenance.html");
    write_provenance_html(out, records, tok);
  }
}

// Weight sets: JSON list of 4-element arrays or compact strings, or CSV with
// one "f4,f3,f2,f1" tuple per line.
inline std::vector<WeightTuple> parse_weight_set(std::string_view text) {
  std::vector<WeightTuple> out;
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '[') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("weight set: ") + e.what());
    }
    for (const auto& item : j) {
      if (item.is_string()) {
        out.push_back(parse_weights(item.get<std::string>()));
      } else if (item.is_array() && item.size() == 4) {
        WeightTuple w;
        for (std::size_t k = 0; k < 4; ++k) {
          if (!item[k].is_number()) throw FormatError("weight set: non-numeric weight");
          w.f[k] = item[k].get<double>();
        }
        w.validate();
        out.push_back(w);
      } else {
        throw FormatError("weight set entries must be 4-element arrays or strings");
      }
    }
    return out;
  }
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto s = line.find_first_not_of(" \t");
    if (s == std::string::npos || line[s] == '#') continue;
    if (std::any_of(line.begin(), line.end(), [](unsigned char c) { return std::isalpha(c); })) continue;  // header
    out.push_back(parse_weights(line.substr(s)));
  }
  return out;
}

inline std::vector<WeightTuple> load_weight_set(const std::string& path) { return parse_weight_set(read_text_file(path)); }

}  // namespace ngstyle
