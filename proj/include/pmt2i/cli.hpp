#pragma once

// The `pmt2i` command-line driver. Kept in a header so tests can run
// commands in-process and inspect exit codes and output.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pmt2i/cache.hpp"
#include "pmt2i/client.hpp"
#include "pmt2i/config.hpp"
#include "pmt2i/dataset.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/evalharness.hpp"
#include "pmt2i/mock_server.hpp"
#include "pmt2i/pipeline.hpp"

namespace pmt2i::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kBackend = 3, kInternal = 4 };

inline int exit_code_for(Errc code) {
  if (is_backend_error(code)) return kBackend;
  switch (code) {
    case Errc::invalid_argument:
    case Errc::out_of_range:
    case Errc::overflow:
    case Errc::config:
    case Errc::parse:
    case Errc::digest_mismatch:
    case Errc::corrupt_checkpoint:
    case Errc::invalid_image:
      return kValidation;
    default:
      return kInternal;
  }
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<std::int64_t> parse_seeds(const std::string& text) {
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(text)) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw Error(Errc::invalid_argument, "invalid seed '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw Error(Errc::invalid_argument, "no seeds given");
  return out;
}

inline std::string absolute_string(const std::string& path) {
  return path.empty() ? path : fs::absolute(path).lexically_normal().string();
}

/// Every capability routed to the named in-process mock.
inline RoutingTable mock_routing(const std::string& name = "default") {
  RoutingTable table;
  for (const auto& cap : known_capabilities()) {
    BackendEndpoint e;
    e.base_url = "mock://" + name;
    e.retry.base_backoff_s = 0.01;
    table[cap] = e;
  }
  return table;
}

}  // namespace detail

struct CommonOptions {
  std::string config_path;
  std::string dataset;
  std::string languages;
  std::string cache_dir;
  bool mock = false;
  bool verbose = false;
};

inline RunConfig load_config_file(const std::string& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::config, "config '" + path + "' is not valid JSON");
  RunConfig config = run_config_from_json(j);
  const fs::path base = fs::absolute(path).parent_path();
  if (!config.dataset_path.empty() && fs::path(config.dataset_path).is_relative()) {
    config.dataset_path = (base / config.dataset_path).lexically_normal().string();
  }
  return config;
}

inline RunConfig base_config(const CommonOptions& o) {
  RunConfig config;
  if (!o.config_path.empty()) config = load_config_file(o.config_path);
  if (!o.dataset.empty()) config.dataset_path = detail::absolute_string(o.dataset);
  if (!o.languages.empty()) config.languages = detail::split_list(o.languages);
  if (o.mock) config.endpoints = detail::mock_routing();
  return config;
}

inline std::string resolve_cache_dir(const std::string& flag, const RunConfig& config) {
  if (!flag.empty()) return flag;
  if (!config.cache_dir.empty()) return config.cache_dir;
  if (const char* env = std::getenv("PMT2I_CACHE_DIR"); env && *env) return env;
  return ".pmt2i-cache";
}

inline Backends make_backends(const RoutingTable& routing, const std::string& cache_dir) {
  return Backends::from_routing(routing, std::make_shared<ResponseCache>(cache_dir));
}

// ---------------------------------------------------------------------------
// Commands.

inline int cmd_translate(const CommonOptions& o, const std::string& out_path, std::ostream& out,
                         std::ostream& err) {
  RunConfig config = base_config(o);
  if (config.dataset_path.empty()) throw Error(Errc::config, "no dataset given (--dataset or config)");
  if (config.languages.empty()) throw Error(Errc::config, "no languages given (--languages or config)");
  (void)config.resolved_languages();
  auto records = load_run_dataset(config);

  // Route check before any request is sent.
  Backends backends;
  std::vector<std::pair<std::size_t, std::string>> work;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& code : config.languages) {
      if (!records[i].translations.count(code)) work.emplace_back(i, code);
    }
  }
  for (const auto& [i, code] : work) {
    if (!config.endpoints.count("translate." + code) && !config.endpoints.count("translate")) {
      throw Error(Errc::config, "no translate endpoint routes language '" + code + "'");
    }
  }
  backends = make_backends(config.endpoints, resolve_cache_dir(o.cache_dir, config));

  std::vector<std::string> results(work.size());
  pmt2i::detail::parallel_for(work.size(), 16, [&](std::size_t k) {
    const auto& [i, code] = work[k];
    results[k] = backends.translator_for(code).translate(records[i].text, "en", code);
  });
  std::size_t fields = 0;
  for (std::size_t k = 0; k < work.size(); ++k) {
    records[work[k].first].translations[work[k].second] = results[k];
  }
  for (const auto& r : records) {
    for (const auto& code : config.languages) fields += r.translations.count(code);
  }
  const fs::path target = out_path;
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  write_file_atomic(target, to_jsonl(records));
  out << "translated " << records.size() << " records into " << config.languages.size()
      << " languages (" << fields << " translation fields) -> " << target.string() << "\n";
  if (o.verbose) err << work.size() << " translations requested\n";
  return kOk;
}

struct RunOptions {
  std::string strategy;
  std::string seeds;
  std::string ablation;
  std::size_t ablation_n = 0;
  std::string out_dir;
  bool fail_fast = false;
  std::size_t stop_after = 0;
};

inline void print_summary(const RunManifest& m, const fs::path& run_dir, std::ostream& out,
                          std::ostream& err) {
  out << "samples=" << m.sample_ids.size() << " candidates=" << m.candidates.size()
      << " failed_candidates=" << m.failures.candidates << " failed_samples=" << m.failures.samples
      << " manifest=" << (run_dir / "manifest.json").string() << "\n";
  if (m.failures.candidates + m.failures.samples + m.failures.translations > 0) {
    err << "warning: " << m.failures.translations << " translation, " << m.failures.candidates
        << " candidate and " << m.failures.samples << " sample failures were tolerated\n";
  }
}

inline int cmd_run(const CommonOptions& o, const RunOptions& r, std::ostream& out, std::ostream& err) {
  RunConfig config = base_config(o);
  if (!r.strategy.empty()) config.variant_strategy = parse_variant_strategy(r.strategy);
  if (!r.seeds.empty()) config.seeds = detail::parse_seeds(r.seeds);
  if (!r.ablation.empty()) config.ablation = parse_ablation_kind(r.ablation);
  if (r.ablation_n != 0) config.ablation_n = r.ablation_n;
  if (!r.out_dir.empty()) config.output_dir = r.out_dir;
  if (r.fail_fast) config.fail_fast = true;
  if (config.output_dir.empty()) throw Error(Errc::config, "no output directory (--out or config)");
  config.output_dir = detail::absolute_string(config.output_dir);
  config.validate();
  const auto dataset = load_run_dataset(config);
  const auto plan = plan_run(config, dataset);
  Backends backends = make_backends(config.endpoints, resolve_cache_dir(o.cache_dir, config));
  check_translation_routes(plan, backends);
  if (o.verbose) {
    err << "plan: " << plan.dataset.size() << " samples x " << plan.variants.size() << " variants x "
        << config.seeds.size() << " seeds = " << plan.generations.size() << " generations, "
        << plan.translations.size() << " translations\n";
  }
  ExecuteOptions exec;
  if (r.stop_after != 0) exec.stop_after = r.stop_after;
  try {
    const auto manifest = execute_run(plan, backends, exec);
    print_summary(manifest, config.output_dir, out, err);
  } catch (const Error& e) {
    if (e.code() != Errc::interrupted) throw;
    out << "stopped: " << e.what() << "\n";
  }
  return kOk;
}

inline int cmd_resume(const CommonOptions& o, const std::string& run_dir, bool fail_fast,
                      std::ostream& out, std::ostream& err) {
  std::optional<RunConfig> expected;
  RunConfig stored = load_run(run_dir).config;
  RoutingTable routing = stored.endpoints;
  if (!o.config_path.empty() || o.mock) {
    RunConfig c = o.config_path.empty() ? stored : base_config(o);
    if (o.mock) c.endpoints = detail::mock_routing();
    if (!o.dataset.empty()) c.dataset_path = detail::absolute_string(o.dataset);
    if (!o.languages.empty()) c.languages = detail::split_list(o.languages);
    c.fail_fast = fail_fast || c.fail_fast;
    expected = c;
    routing = c.endpoints;
  }
  Backends backends = make_backends(routing, resolve_cache_dir(o.cache_dir, stored));
  const auto manifest = resume_run(run_dir, backends, expected);
  print_summary(manifest, run_dir, out, err);
  return kOk;
}

inline int cmd_rerank(const CommonOptions& o, const std::string& run_dir, const std::string& endpoint,
                      std::ostream& out, std::ostream& err) {
  RunConfig stored = load_run(run_dir).config;
  RoutingTable routing = stored.endpoints;
  if (!o.config_path.empty()) routing = load_config_file(o.config_path).endpoints;
  if (o.mock) routing = detail::mock_routing();
  const std::string capability = endpoint.empty() ? stored.rerank_endpoint : endpoint;
  if (!routing.count(capability)) {
    throw Error(Errc::config, "no endpoint configured for '" + capability + "'");
  }
  Backends backends = make_backends(routing, resolve_cache_dir(o.cache_dir, stored));
  const auto manifest = rerank_run(run_dir, backends.get(capability));
  print_summary(manifest, run_dir, out, err);
  return kOk;
}

inline std::vector<Metric> parse_metrics(const std::string& text) {
  std::vector<Metric> out;
  for (const auto& name : detail::split_list(text)) out.push_back(parse_metric(name));
  if (out.empty()) throw Error(Errc::invalid_argument, "no metrics requested");
  return out;
}

inline std::vector<std::string> labels_for(const std::vector<std::string>& dirs, const std::string& labels) {
  std::vector<std::string> out = detail::split_list(labels);
  if (out.empty()) {
    for (const auto& d : dirs) out.push_back(fs::path(d).lexically_normal().filename().string());
  }
  if (out.size() != dirs.size()) {
    throw Error(Errc::invalid_argument, std::to_string(dirs.size()) + " runs but " +
                                            std::to_string(out.size()) + " labels");
  }
  return out;
}

inline int cmd_eval(const CommonOptions& o, std::vector<std::string> run_dirs, const std::string& metrics_text,
                    bool all_candidates, const std::string& labels_text, std::ostream& out) {
  EvalOptions options;
  options.metrics = parse_metrics(metrics_text);
  options.all_candidates = all_candidates;
  const auto labels = labels_for(run_dirs, labels_text);
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < run_dirs.size(); ++i) {
    EvalInputs inputs = EvalInputs::load(run_dirs[i], all_candidates);
    RoutingTable routing = inputs.config.endpoints;
    if (!o.config_path.empty()) routing = load_config_file(o.config_path).endpoints;
    if (o.mock) routing = detail::mock_routing();
    Backends backends = make_backends(routing, resolve_cache_dir(o.cache_dir, inputs.config));
    auto report = evaluate(inputs, backends, options);
    write_report_files(run_dirs[i], report, labels[i]);
    reports.push_back(std::move(report));
  }
  out << report_table(reports, labels).markdown;
  return kOk;
}

inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& labels_text,
                      const std::string& format, std::ostream& out) {
  const auto labels = labels_for(run_dirs, labels_text);
  std::vector<EvalReport> reports;
  for (const auto& dir : run_dirs) {
    if (!fs::exists(fs::path(dir) / "report.json")) {
      throw Error(Errc::config, "'" + dir + "' has no report.json; run `pmt2i eval` first");
    }
    reports.push_back(read_report(dir));
  }
  const auto table = report_table(reports, labels);
  if (format == "csv") {
    out << table.csv;
  } else if (format == "md") {
    out << table.markdown;
  } else {
    throw Error(Errc::invalid_argument, "unknown report format '" + format + "' (md or csv)");
  }
  return kOk;
}

inline int cmd_cache(const std::string& action, const CommonOptions& o, std::ostream& out) {
  ResponseCache cache(resolve_cache_dir(o.cache_dir, RunConfig{}));
  if (action == "clear") {
    out << "removed " << cache.clear() << " cached responses from " << cache.directory().string() << "\n";
    return kOk;
  }
  const auto stats = cache.stats();
  out << "cache " << cache.directory().string() << ": " << stats.entries << " entries, " << stats.bytes
      << " bytes\n";
  for (const auto& [op, n] : stats.per_operation) out << "  " << op << ": " << n << "\n";
  return kOk;
}

inline int cmd_serve_mock(const std::string& host, int port, const MockOptions& options, std::ostream& out) {
  auto backend = std::make_shared<MockBackend>(options, "served");
  MockServer server(backend);
  out << "serving mock backends on http://" << host << ":" << port << std::endl;
  server.run(host, port);
  return kOk;
}

// ---------------------------------------------------------------------------

inline void build_app(CLI::App& app) {
  app.description("Parallel multilingual prompting for text-to-image generation");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));
}

/// Parses `args` (without the program name) and runs one subcommand.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"", "pmt2i"};
  build_app(app);
  CommonOptions common;
  app.add_option("--cache-dir", common.cache_dir, "Response cache directory")->group("Global");
  app.add_flag("-v,--verbose", common.verbose, "Verbose progress on stderr")->group("Global");

  auto add_config_flags = [&](CLI::App* sub, bool with_dataset) {
    sub->add_option("--config", common.config_path, "Run configuration file (JSON)")->check(CLI::ExistingFile);
    if (with_dataset) {
      sub->add_option("--dataset", common.dataset, "Prompt dataset (JSONL or CSV)");
      sub->add_option("--languages", common.languages, "Translation languages, e.g. de,es,fr");
    }
    sub->add_flag("--mock", common.mock, "Route every capability to the in-process mock backend");
  };

  std::string translate_out;
  auto* translate = app.add_subcommand("translate", "Translate a dataset and write it with translations");
  add_config_flags(translate, true);
  translate->add_option("--out", translate_out, "Output JSONL path")->required();

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Generate candidates for every prompt variant and rerank them");
  add_config_flags(run, true);
  run->add_option("--variant-strategy", run_opts.strategy, "all | first:K | sample:K:SEED");
  run->add_option("--seeds", run_opts.seeds, "Comma-separated generation seeds");
  run->add_option("--ablation", run_opts.ablation,
                  "pmt2i | english_only | single_language | reduplication | paraphrase");
  run->add_option("--n", run_opts.ablation_n, "Duplicate or paraphrase count for ablations");
  run->add_option("--out", run_opts.out_dir, "Run directory");
  run->add_flag("--fail-fast", run_opts.fail_fast, "Abort on the first failed item");
  run->add_option("--stop-after", run_opts.stop_after, "Stop after N generations (resume later)")
      ->group("");

  std::string run_dir;
  bool resume_fail_fast = false;
  auto* resume = app.add_subcommand("resume", "Finish an interrupted run");
  add_config_flags(resume, false);
  resume->add_option("--out", run_dir, "Run directory")->required();
  resume->add_flag("--fail-fast", resume_fail_fast, "Abort on the first failed item");

  std::string rerank_endpoint;
  auto* rerank = app.add_subcommand("rerank", "Re-select candidates of a run with another embed endpoint");
  add_config_flags(rerank, false);
  rerank->add_option("--out", run_dir, "Run directory")->required();
  rerank->add_option("--embed-endpoint", rerank_endpoint, "Capability name of the embedder");

  std::vector<std::string> compare_dirs;
  std::string metrics = "clip_t";
  std::string labels;
  bool all_candidates = false;
  auto* eval = app.add_subcommand("eval", "Compute metrics for one or more runs");
  add_config_flags(eval, false);
  auto* eval_out = eval->add_option("--out", run_dir, "Run directory");
  eval->add_option("--compare", compare_dirs, "Run directories to evaluate side by side")
      ->excludes(eval_out);
  eval->add_option("--metrics", metrics,
                   "clip_t,clip_i,dino,reward,correct_proportion,bvqa,l1_diversity");
  eval->add_flag("--all-candidates", all_candidates, "Average over all candidates, not the selection");
  eval->add_option("--labels", labels, "Comma-separated row labels");

  std::string format = "md";
  auto* report = app.add_subcommand("report", "Print a table from evaluated runs");
  report->add_option("--compare", compare_dirs, "Evaluated run directories")->required();
  report->add_option("--labels", labels, "Comma-separated row labels");
  report->add_option("--format", format, "md | csv");

  std::string cache_action;
  auto* cache = app.add_subcommand("cache", "Inspect or clear the response cache");
  cache->add_option("action", cache_action, "stats | clear")->required()->check(CLI::IsMember({"stats", "clear"}));

  std::string host = "127.0.0.1";
  int port = 8765;
  MockOptions mock_options;
  int latency_ms = 0;
  auto* serve = app.add_subcommand("serve-mock", "Serve the deterministic mock backends over HTTP");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--dim", mock_options.dim, "Embedding dimension");
  serve->add_option("--model-id", mock_options.model_id, "Reported model id");
  serve->add_option("--latency-ms", latency_ms, "Artificial per-request latency");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*translate) return cmd_translate(common, translate_out, out, err);
    if (*run) return cmd_run(common, run_opts, out, err);
    if (*resume) return cmd_resume(common, run_dir, resume_fail_fast, out, err);
    if (*rerank) return cmd_rerank(common, run_dir, rerank_endpoint, out, err);
    if (*eval) {
      if (compare_dirs.empty()) {
        if (run_dir.empty()) throw Error(Errc::invalid_argument, "eval needs --out DIR or --compare DIR...");
        compare_dirs.push_back(run_dir);
      }
      return cmd_eval(common, compare_dirs, metrics, all_candidates, labels, out);
    }
    if (*report) return cmd_report(compare_dirs, labels, format, out);
    if (*cache) return cmd_cache(cache_action, common, out);
    if (*serve) {
      mock_options.latency = std::chrono::milliseconds(latency_ms);
      return cmd_serve_mock(host, port, mock_options, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args), out, err);
}

}  // namespace pmt2i::cli
