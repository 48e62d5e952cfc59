// ngstyle command line: train, generate, ppl, sweep, select, report, prompts.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ngstyle.hpp"

namespace fs = std::filesystem;
using namespace ngstyle;

namespace {

bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0; }

// Resolves tokenizer and LM source strings; shares one Endpoint per URL.
class Session {
 public:
  std::string tokenizer_spec = "builtin";
  Casing casing = Casing::preserve;
  int ref_order = 3;
  double ref_add_k = 0.1;

  const Tokenizer& tokenizer() {
    if (!tokenizer_) {
      if (tokenizer_spec == "builtin") {
        tokenizer_ = std::make_unique<ByteTokenizer>();
      } else if (is_url(tokenizer_spec)) {
        tokenizer_ = std::make_unique<RemoteTokenizer>(endpoint(tokenizer_spec));
      } else {
        throw UsageError("--tokenizer must be 'builtin' or an http(s) URL, got '" + tokenizer_spec + "'");
      }
    }
    return *tokenizer_;
  }

  TokenSeq read_tokens(const std::string& path) {
    auto text = read_utf8_file(path);
    if (text.empty()) return {};
    return tokenize(tokenizer(), normalize_casing(text, casing));
  }

  // builtin:FILE | uniform:N | http(s)://host:port
  const LogitSource& source(const std::string& spec) {
    auto it = sources_.find(spec);
    if (it != sources_.end()) return *it->second;
    std::unique_ptr<LogitSource> src;
    const auto& tok = tokenizer();
    if (spec.rfind("builtin:", 0) == 0) {
      const std::string path = spec.substr(8);
      auto tokens = read_tokens(path);
      src = std::make_unique<ReferenceLm>(tokens, ref_order, ref_add_k, tok.vocab_size(), tok.tokenizer_id(),
                                          "builtin:" + fs::path(path).filename().string());
    } else if (spec.rfind("uniform:", 0) == 0) {
      const long n = std::strtol(spec.c_str() + 8, nullptr, 10);
      if (n < 1) throw UsageError("uniform source needs a positive vocabulary size");
      src = std::make_unique<UniformSource>(static_cast<std::size_t>(n), tok.tokenizer_id());
    } else if (is_url(spec)) {
      src = std::make_unique<HttpLogitSource>(endpoint(spec));
    } else {
      throw UsageError("unknown LM source '" + spec + "' (expected builtin:FILE, uniform:N or a URL)");
    }
    if (src->tokenizer_id() != tok.tokenizer_id()) {
      throw ConfigError("tokenizer mismatch: LM '" + spec + "' uses '" + src->tokenizer_id() + "', tokenizer is '" +
                        tok.tokenizer_id() + "'");
    }
    return *sources_.emplace(spec, std::move(src)).first->second;
  }

 private:
  std::shared_ptr<const Endpoint> endpoint(const std::string& url) {
    auto& e = endpoints_[url];
    if (!e) e = std::make_shared<const Endpoint>(EndpointConfig::from_env(url));
    return e;
  }

  std::map<std::string, std::shared_ptr<const Endpoint>> endpoints_;
  std::unique_ptr<Tokenizer> tokenizer_;
  std::map<std::string, std::unique_ptr<LogitSource>> sources_;
};

void add_common(CLI::App* app, Session& s, std::string& casing) {
  app->add_option("--tokenizer", s.tokenizer_spec, "builtin or LM server URL")->capture_default_str();
  app->add_option("--casing", casing, "lower|upper|preserve")->capture_default_str();
}

void add_ref_options(CLI::App* app, Session& s) {
  app->add_option("--ref-order", s.ref_order, "order of builtin reference LMs")->capture_default_str();
  app->add_option("--ref-add-k", s.ref_add_k, "add-k smoothing of builtin reference LMs")->capture_default_str();
}

std::ofstream open_file(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  return open_output(p);
}

std::vector<PromptRecord> load_prompts(const std::string& path, Session& s) {
  const auto text = read_utf8_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    std::istringstream in(text);
    auto records = read_prompts_jsonl(in);
    for (auto& r : records) {
      if (r.token_ids.empty()) r.token_ids = tokenize(s.tokenizer(), r.rendered);
    }
    return records;
  }
  std::vector<PromptRecord> records;
  const auto lines = read_prompt_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    PromptRecord r;
    r.id = "line" + std::to_string(i);
    r.raw_prompt = lines[i];
    r.rendered = lines[i];
    r.token_ids = tokenize(s.tokenizer(), normalize_casing(lines[i], s.casing));
    records.push_back(std::move(r));
  }
  return records;
}

std::optional<TokenId> eos_of(long eos) {
  if (eos < 0) return std::nullopt;
  return static_cast<TokenId>(eos);
}

std::size_t workers_from_env() {
  if (const char* v = std::getenv("NGSTYLE_WORKERS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const ConfigError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const EncodingError*>(&e)) return 4;
  if (dynamic_cast<const FormatError*>(&e)) return 5;
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const TokenizerError*>(&e)) return 6;
  if (dynamic_cast<const EvaluationError*>(&e)) return 7;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decode-time subword style transfer with scaled ngram logits"};
  app.require_subcommand(1);
  Session session;
  std::string casing = "preserve";

  // train
  auto* train_cmd = app.add_subcommand("train", "train an ngram set on a corpus");
  std::string corpus_path, ngrams_out;
  int order = 4;
  train_cmd->add_option("--corpus", corpus_path)->required();
  train_cmd->add_option("--order", order)->capture_default_str();
  train_cmd->add_option("--out", ngrams_out)->required();
  add_common(train_cmd, session, casing);

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "generate from prompts with scaled logits");
  std::string ngrams_path, weights_str = "0000", mode_str = "greedy", lm_spec, prompt_file, gen_out;
  std::uint64_t seed = 0;
  std::size_t max_len = 256;
  double temperature = 1.0, cap_multiple = 30.0;
  long eos = -1;
  gen_cmd->add_option("--ngrams", ngrams_path);
  gen_cmd->add_option("--weights", weights_str, "f4,f3,f2,f1 or a digit string such as 0020")->capture_default_str();
  gen_cmd->add_option("--mode", mode_str, "greedy|sample")->capture_default_str();
  gen_cmd->add_option("--seed", seed)->capture_default_str();
  gen_cmd->add_option("--max-len", max_len)->capture_default_str();
  gen_cmd->add_option("--temperature", temperature)->capture_default_str();
  gen_cmd->add_option("--eos", eos, "stop token id (negative: none)");
  gen_cmd->add_option("--cap", cap_multiple, "scaling cap as a multiple of f (<= 0 disables)")->capture_default_str();
  gen_cmd->add_option("--lm", lm_spec, "builtin:FILE, uniform:N or URL")->required();
  gen_cmd->add_option("--prompt-file", prompt_file, "prompt JSONL or one prompt per line")->required();
  gen_cmd->add_option("--out", gen_out)->required();
  add_common(gen_cmd, session, casing);
  add_ref_options(gen_cmd, session);

  // ppl
  auto* ppl_cmd = app.add_subcommand("ppl", "sliding-window perplexity, optionally under scaling");
  std::string text_path, report_out, label;
  std::size_t window = 32, stride = 1;
  std::string ppl_weights;
  ppl_cmd->add_option("--text", text_path)->required();
  ppl_cmd->add_option("--lm", lm_spec)->required();
  ppl_cmd->add_option("--ngrams", ngrams_path);
  ppl_cmd->add_option("--weights", ppl_weights);
  ppl_cmd->add_option("--window", window)->capture_default_str();
  ppl_cmd->add_option("--stride", stride)->capture_default_str();
  ppl_cmd->add_option("--label", label);
  ppl_cmd->add_option("--cap", cap_multiple)->capture_default_str();
  ppl_cmd->add_option("--out", report_out, "CSV report (stdout if omitted)");
  add_common(ppl_cmd, session, casing);
  add_ref_options(ppl_cmd, session);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "prompts x weights x modes sweep with gPPL and rPPL");
  std::string prompts_path, weight_set_path, eval_spec, target_path, out_dir;
  std::vector<std::string> modes{"greedy", "sample"};
  std::size_t workers = workers_from_env();
  sweep_cmd->add_option("--prompts", prompts_path)->required();
  sweep_cmd->add_option("--weights", weight_set_path, "JSON or CSV list of weight tuples")->required();
  sweep_cmd->add_option("--ngrams", ngrams_path)->required();
  sweep_cmd->add_option("--lm", lm_spec)->required();
  sweep_cmd->add_option("--eval-lm", eval_spec)->required();
  sweep_cmd->add_option("--target", target_path)->required();
  sweep_cmd->add_option("--out", out_dir)->required();
  sweep_cmd->add_option("--modes", modes)->capture_default_str();
  sweep_cmd->add_option("--max-len", max_len)->capture_default_str();
  sweep_cmd->add_option("--seed", seed)->capture_default_str();
  sweep_cmd->add_option("--window", window)->capture_default_str();
  sweep_cmd->add_option("--stride", stride)->capture_default_str();
  sweep_cmd->add_option("--workers", workers)->capture_default_str();
  sweep_cmd->add_option("--temperature", temperature)->capture_default_str();
  sweep_cmd->add_option("--eos", eos);
  sweep_cmd->add_option("--cap", cap_multiple)->capture_default_str();
  add_common(sweep_cmd, session, casing);
  add_ref_options(sweep_cmd, session);

  // select
  auto* select_cmd = app.add_subcommand("select", "Pareto front of a sweep (minimize gap and rPPL)");
  std::string sweep_csv, pareto_out, svg_out;
  select_cmd->add_option("--sweep", sweep_csv)->required();
  select_cmd->add_option("--out", pareto_out);
  select_cmd->add_option("--svg", svg_out);

  // report
  auto* report_cmd = app.add_subcommand("report", "provenance HTML for generations");
  std::string gen_in, html_out;
  report_cmd->add_option("--gen", gen_in)->required();
  report_cmd->add_option("--html", html_out)->required();
  report_cmd->add_option("--tokenizer", session.tokenizer_spec)->capture_default_str();

  // prompts
  auto* prompts_cmd = app.add_subcommand("prompts", "build stem-only and control prompt sets");
  std::string wp_path, stem = kDefaultStem, templates_path, vars_path, prompts_out;
  prompts_cmd->add_option("--wp", wp_path, "one prompt per line")->required();
  prompts_cmd->add_option("--stem", stem)->capture_default_str();
  prompts_cmd->add_option("--templates", templates_path);
  prompts_cmd->add_option("--vars", vars_path);
  prompts_cmd->add_option("--out", prompts_out)->required();
  add_common(prompts_cmd, session, casing);

  CLI11_PARSE(app, argc, argv);

  try {
    session.casing = parse_casing(casing);
    ScalingOptions scaling{cap_multiple};

    if (*train_cmd) {
      const auto& tok = session.tokenizer();
      auto tokens = session.read_tokens(corpus_path);
      auto set = train_set(tokens, order, tok.vocab_size(), tok.tokenizer_id());
      save(set, ngrams_out);
      std::printf("trained orders %d..1 on %zu tokens -> %s\n", set.max_order(), tokens.size(), ngrams_out.c_str());

    } else if (*gen_cmd) {
      const auto& base = session.source(lm_spec);
      std::optional<NgramSet> set;
      if (!ngrams_path.empty()) {
        set = load_ngrams(ngrams_path);
        require_compatible(base, *set);
      }
      const auto w = parse_weights(weights_str);
      if (!set && !w.all_zero()) throw UsageError("nonzero --weights need --ngrams");
      const auto mode = parse_mode(mode_str);
      const auto prompts = load_prompts(prompt_file, session);
      std::vector<GenerationRecord> records;
      for (const auto& p : prompts) {
        GenerateOptions opts;
        opts.prompt_id = p.id;
        opts.mode = mode;
        opts.max_len = max_len;
        opts.seed = derive_seed(seed, p.id, w, mode);
        opts.temperature = temperature;
        opts.eos = eos_of(eos);
        opts.scaling = scaling;
        opts.tokenizer = &session.tokenizer();
        records.push_back(generate(base, set ? &*set : nullptr, w, p.token_ids, opts));
      }
      auto out = open_file(gen_out);
      write_generations_jsonl(out, records);
      std::printf("%zu generations -> %s\n", records.size(), gen_out.c_str());

    } else if (*ppl_cmd) {
      const auto& src = session.source(lm_spec);
      const auto tokens = session.read_tokens(text_path);
      if (label.empty()) label = fs::path(text_path).filename().string();
      PerplexityReport r;
      if (!ngrams_path.empty()) {
        const auto set = load_ngrams(ngrams_path);
        r = rppl(tokens, src, set, parse_weights(ppl_weights.empty() ? "0000" : ppl_weights), window, stride, label,
                 scaling);
      } else {
        if (!ppl_weights.empty()) throw UsageError("--weights needs --ngrams");
        r = sliding_window_ppl(src, tokens, window, stride, label);
      }
      if (report_out.empty()) {
        write_report_csv(std::cout, {r});
      } else {
        auto out = open_file(report_out);
        write_report_csv(out, {r});
        std::printf("%s ppl %s over %zu tokens\n", r.label.c_str(), format_double(r.ppl).c_str(), r.token_count);
      }

    } else if (*sweep_cmd) {
      const auto& base = session.source(lm_spec);
      const auto& eval_src = session.source(eval_spec);
      const auto set = load_ngrams(ngrams_path);
      const auto prompts = load_prompts(prompts_path, session);
      const auto target = session.read_tokens(target_path);
      SweepConfig cfg;
      cfg.weights = load_weight_set(weight_set_path);
      cfg.modes.clear();
      for (const auto& m : modes) cfg.modes.push_back(parse_mode(m));
      cfg.max_len = max_len;
      cfg.master_seed = seed;
      cfg.window = window;
      cfg.stride = stride;
      cfg.workers = workers;
      cfg.temperature = temperature;
      cfg.eos = eos_of(eos);
      cfg.scaling = scaling;
      cfg.tokenizer = &session.tokenizer();
      const auto res = run_sweep(prompts, base, eval_src, set, target, cfg);
      emit_reports(res.rows, res.records, out_dir, session.tokenizer(), fs::path(target_path).filename().string());
      {
        auto out = open_output(fs::path(out_dir) / "generations.jsonl");
        write_generations_jsonl(out, res.records);
      }
      nlohmann::ordered_json manifest;
      manifest["target"] = target_path;
      manifest["target_ppl"] = res.target.ppl;
      manifest["target_tokens"] = res.target.token_count;
      manifest["lm"] = base.descriptor();
      manifest["eval_lm"] = eval_src.descriptor();
      manifest["tokenizer"] = session.tokenizer().tokenizer_id();
      manifest["ngrams"] = ngrams_path;
      manifest["ngram_order"] = set.max_order();
      manifest["master_seed"] = seed;
      manifest["rng"] = kRngId;
      manifest["max_len"] = max_len;
      manifest["window"] = window;
      manifest["stride"] = stride;
      manifest["temperature"] = temperature;
      manifest["cap_multiple"] = cap_multiple;
      manifest["modes"] = modes;
      manifest["n_prompts"] = prompts.size();
      auto& ws = manifest["weights"] = nlohmann::ordered_json::array();
      for (const auto& w : cfg.weights) ws.push_back(w.label());
      {
        auto out = open_output(fs::path(out_dir) / "manifest.json");
        out << manifest.dump(2) << "\n";
      }
      std::size_t failed = 0;
      for (const auto& r : res.rows) failed += r.ok ? 0 : 1;
      std::printf("%zu rows (%zu failed), target ppl %s -> %s\n", res.rows.size(), failed,
                  format_double(res.target.ppl).c_str(), out_dir.c_str());

    } else if (*select_cmd) {
      std::ifstream in(sweep_csv, std::ios::binary);
      if (!in) throw IoError("cannot read '" + sweep_csv + "'");
      const auto rows = read_sweep_csv(in);
      const auto sel = select_optimal(rows);
      if (!pareto_out.empty()) {
        auto out = open_file(pareto_out);
        write_sweep_csv(out, sel.pareto_front);
      }
      if (!svg_out.empty()) {
        auto out = open_file(svg_out);
        write_scatter_svg(out, rows, fs::path(sweep_csv).filename().string());
      }
      for (const auto& r : sel.pareto_front) {
        std::printf("%s %s gap=%s rppl=%s\n", to_string(r.mode).c_str(), r.weights.label().c_str(),
                    format_double(r.gap).c_str(), format_double(r.rppl).c_str());
      }

    } else if (*report_cmd) {
      std::ifstream in(gen_in, std::ios::binary);
      if (!in) throw IoError("cannot read '" + gen_in + "'");
      const auto records = read_generations_jsonl(in);
      auto out = open_file(html_out);
      write_provenance_html(out, records, session.tokenizer());
      std::printf("%zu generations -> %s\n", records.size(), html_out.c_str());

    } else if (*prompts_cmd) {
      std::vector<PromptTemplate> templates;
      std::map<std::string, std::string> vars;
      if (!templates_path.empty()) templates = load_templates(templates_path);
      if (!vars_path.empty()) vars = load_variables(vars_path);
      const auto records = build_prompt_sets(read_prompt_lines(wp_path), stem, templates, vars, session.tokenizer());
      auto out = open_file(prompts_out);
      write_prompts_jsonl(out, records);
      std::printf("%zu prompts -> %s\n", records.size(), prompts_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ngstyle: %s\n", e.what());
    return exit_code(e);
  }
  return 0;
}
