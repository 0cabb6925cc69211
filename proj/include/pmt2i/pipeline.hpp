#pragma once

// Run planning and resumable execution.
//
// Run directory layout:
//   run.json          config + dataset snapshot the run was planned from
//   checkpoint.jsonl  header line, then one line per completed item
//   images/<sample>/<rank-or-label>_<seed>.png
//   manifest.json     written atomically once every item has been attempted

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pmt2i/cache.hpp"
#include "pmt2i/client.hpp"
#include "pmt2i/config.hpp"
#include "pmt2i/dataset.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/prompt.hpp"
#include "pmt2i/rerank.hpp"

namespace pmt2i {

inline constexpr int kManifestSchema = 1;

struct VariantSpec {
  /// Decimal rank for PMT2I variants, otherwise an ablation label.
  std::string label;
  std::optional<std::uint64_t> rank;
  std::vector<std::string> order;
  AblationKind kind = AblationKind::pmt2i;

  friend bool operator==(const VariantSpec&, const VariantSpec&) = default;
};

struct TranslationItem {
  std::size_t sample_index = 0;
  std::string language;

  friend bool operator==(const TranslationItem&, const TranslationItem&) = default;
};

struct GenerationItem {
  std::size_t sample_index = 0;
  std::size_t variant_index = 0;
  std::size_t seed_index = 0;
  std::int64_t seed = 0;
  /// Relative to the run directory.
  std::string image_path;

  friend bool operator==(const GenerationItem&, const GenerationItem&) = default;
};

struct RunPlan {
  RunConfig config;
  std::string config_digest;
  std::vector<DatasetRecord> dataset;
  std::vector<VariantSpec> variants;
  std::vector<TranslationItem> translations;
  std::vector<std::size_t> paraphrase_samples;
  /// Ordered by (sample index, variant index, seed index).
  std::vector<GenerationItem> generations;

  friend bool operator==(const RunPlan&, const RunPlan&) = default;
};

struct CandidateRecord {
  std::string sample_id;
  std::string label;
  std::optional<std::uint64_t> rank;
  std::string prompt;
  std::int64_t seed = 0;
  std::string image_path;
  std::string backend_id;
  bool ok = false;
  std::string error;
  std::string started_at;
  double duration_ms = 0;

  CandidateRef ref() const { return {sample_id, label, seed}; }

  friend bool operator==(const CandidateRecord&, const CandidateRecord&) = default;
};

struct SampleSelection {
  std::string sample_id;
  bool ok = false;
  std::string error;
  std::optional<Selection> selection;

  friend bool operator==(const SampleSelection&, const SampleSelection&) = default;
};

struct FailureTally {
  std::size_t translations = 0;
  std::size_t candidates = 0;
  std::size_t samples = 0;

  friend bool operator==(const FailureTally&, const FailureTally&) = default;
};

struct RunManifest {
  int schema = kManifestSchema;
  std::string tool_version{kToolVersion};
  std::string config_digest;
  std::vector<std::string> sample_ids;
  std::vector<CandidateRecord> candidates;
  std::vector<SampleSelection> selections;
  FailureTally failures;
};

// ---------------------------------------------------------------------------
// Serialization.

inline json to_json(const CandidateRecord& r) {
  json j = {{"sample_id", r.sample_id},
            {"label", r.label},
            {"prompt", r.prompt},
            {"seed", r.seed},
            {"image_path", r.image_path},
            {"backend_id", r.backend_id},
            {"status", r.ok ? "ok" : "failed"},
            {"timing", {{"started_at", r.started_at}, {"duration_ms", r.duration_ms}}}};
  if (r.rank) j["rank"] = *r.rank;
  if (!r.ok) j["error"] = r.error;
  return j;
}

inline CandidateRecord candidate_record_from_json(const json& j) {
  CandidateRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.label = j.at("label").get<std::string>();
  if (j.contains("rank")) r.rank = j["rank"].get<std::uint64_t>();
  r.prompt = j.at("prompt").get<std::string>();
  r.seed = j.at("seed").get<std::int64_t>();
  r.image_path = j.at("image_path").get<std::string>();
  r.backend_id = j.value("backend_id", std::string());
  r.ok = j.at("status").get<std::string>() == "ok";
  r.error = j.value("error", std::string());
  if (j.contains("timing")) {
    r.started_at = j["timing"].value("started_at", std::string());
    r.duration_ms = j["timing"].value("duration_ms", 0.0);
  }
  return r;
}

inline json to_json(const SampleSelection& s) {
  json j = {{"sample_id", s.sample_id}, {"status", s.ok ? "ok" : "failed"}};
  if (!s.ok) j["error"] = s.error;
  if (s.selection) j["selection"] = to_json(*s.selection);
  return j;
}

inline SampleSelection sample_selection_from_json(const json& j) {
  SampleSelection s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.ok = j.at("status").get<std::string>() == "ok";
  s.error = j.value("error", std::string());
  if (j.contains("selection")) s.selection = selection_from_json(j["selection"]);
  return s;
}

inline json to_json(const RunManifest& m) {
  json candidates = json::array();
  for (const auto& c : m.candidates) candidates.push_back(to_json(c));
  json selections = json::array();
  for (const auto& s : m.selections) selections.push_back(to_json(s));
  return {{"schema", m.schema},
          {"tool_version", m.tool_version},
          {"config_digest", m.config_digest},
          {"sample_ids", m.sample_ids},
          {"candidates", candidates},
          {"selections", selections},
          {"failures",
           {{"translations", m.failures.translations},
            {"candidates", m.failures.candidates},
            {"samples", m.failures.samples}}}};
}

inline RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.schema = j.at("schema").get<int>();
    if (m.schema != kManifestSchema) {
      throw Error(Errc::parse, "unsupported manifest schema " + std::to_string(m.schema));
    }
    m.tool_version = j.value("tool_version", std::string());
    m.config_digest = j.at("config_digest").get<std::string>();
    m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    for (const auto& c : j.at("candidates")) m.candidates.push_back(candidate_record_from_json(c));
    for (const auto& s : j.at("selections")) m.selections.push_back(sample_selection_from_json(s));
    const auto& f = j.at("failures");
    m.failures = {f.value("translations", std::size_t{0}), f.value("candidates", std::size_t{0}),
                  f.value("samples", std::size_t{0})};
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("manifest: ") + e.what());
  }
}

/// The manifest with timing fields removed, for reproducibility comparisons.
inline json without_timing(json manifest) {
  for (auto& c : manifest["candidates"]) c.erase("timing");
  return manifest;
}

inline RunManifest read_manifest(const fs::path& run_dir) {
  const auto path = run_dir / "manifest.json";
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::parse, "'" + path.string() + "' is not valid JSON");
  return manifest_from_json(j);
}

inline void write_manifest(const fs::path& run_dir, const RunManifest& manifest) {
  write_file_atomic(run_dir / "manifest.json", to_json(manifest).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Planning.

/// Maps an opaque sample id onto one safe path component.
inline std::string path_component(std::string_view id) {
  std::string out;
  for (char c : id) {
    const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '-' || c == '_' || c == '.';
    out.push_back(safe ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

inline std::vector<VariantSpec> plan_variants(const RunConfig& config) {
  std::vector<VariantSpec> out;
  switch (config.ablation) {
    case AblationKind::pmt2i: {
      std::vector<std::uint64_t> ranks;
      if (!config.variants.empty()) {
        for (const auto& order : config.variants) {
          ranks.push_back(variant_rank(order, config.languages));
        }
        if (std::set<std::uint64_t>(ranks.begin(), ranks.end()).size() != ranks.size()) {
          throw Error(Errc::config, "explicit variants contain duplicates");
        }
      } else {
        ranks = select_variant_ranks(count_variants(config.languages.size()), config.variant_strategy);
      }
      for (auto rank : ranks) {
        out.push_back({std::to_string(rank), rank, variant_unrank(rank, config.languages),
                       AblationKind::pmt2i});
      }
      break;
    }
    case AblationKind::english_only:
      out.push_back({"en", std::nullopt, {}, AblationKind::english_only});
      break;
    case AblationKind::single_language:
      for (const auto& code : config.languages) {
        out.push_back({"only-" + code, std::nullopt, {code}, AblationKind::single_language});
      }
      break;
    case AblationKind::reduplication:
      out.push_back({"dup" + std::to_string(config.effective_ablation_n()), std::nullopt, {},
                     AblationKind::reduplication});
      break;
    case AblationKind::paraphrase:
      out.push_back({"para" + std::to_string(config.effective_ablation_n()), std::nullopt, {},
                     AblationKind::paraphrase});
      break;
  }
  return out;
}

inline RunPlan plan_run(const RunConfig& config, const std::vector<DatasetRecord>& dataset) {
  config.validate();
  if (dataset.empty()) throw Error(Errc::invalid_argument, "dataset is empty");
  RunPlan plan;
  plan.config = config;
  plan.dataset = dataset;
  plan.config_digest = config_digest(config, dataset);
  plan.variants = plan_variants(config);

  std::set<std::string> components;
  for (const auto& r : dataset) {
    if (!components.insert(path_component(r.id)).second) {
      throw Error(Errc::invalid_argument,
                  "sample id '" + r.id + "' collides with another id after path sanitizing");
    }
  }

  std::set<std::string> needed;
  for (const auto& v : plan.variants) needed.insert(v.order.begin(), v.order.end());
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    for (const auto& code : config.languages) {
      if (needed.count(code) && !dataset[s].translations.count(code)) {
        plan.translations.push_back({s, code});
      }
    }
    if (config.ablation == AblationKind::paraphrase) plan.paraphrase_samples.push_back(s);
  }

  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const std::string dir = "images/" + path_component(dataset[s].id) + "/";
    for (std::size_t v = 0; v < plan.variants.size(); ++v) {
      for (std::size_t k = 0; k < config.seeds.size(); ++k) {
        const auto seed = config.seeds[k];
        plan.generations.push_back(
            {s, v, k, seed, dir + plan.variants[v].label + "_" + std::to_string(seed) + ".png"});
      }
    }
  }
  return plan;
}

/// Checks that every translation the plan needs has a route, before any
/// request is sent.
inline void check_translation_routes(const RunPlan& plan, const Backends& backends) {
  for (const auto& item : plan.translations) {
    if (!backends.can_translate_to(item.language)) {
      throw Error(Errc::config, "no translate endpoint routes language '" + item.language + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Execution helpers.

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Stops handing
/// out work once `stop` is set or an exception escapes; the first exception
/// is rethrown after all threads have joined.
inline void parallel_for(std::size_t count, std::size_t workers,
                         const std::function<void(std::size_t)>& fn,
                         std::atomic<bool>* stop = nullptr) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (;;) {
          if (failed.load() || (stop && stop->load())) return;
          const std::size_t i = next.fetch_add(1);
          if (i >= count) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

class CheckpointLog {
 public:
  explicit CheckpointLog(const fs::path& path) : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw Error(Errc::io, "cannot open checkpoint '" + path.string() + "'");
  }

  void append(const json& line) {
    std::lock_guard lock(mutex_);
    out_ << line.dump() << '\n';
    out_.flush();
    if (!out_) throw Error(Errc::io, "checkpoint write failed");
  }

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

struct CheckpointState {
  std::optional<std::string> config_digest;
  std::map<std::pair<std::size_t, std::string>, std::string> translations;
  std::map<std::size_t, std::vector<std::string>> paraphrases;
  std::map<std::size_t, CandidateRecord> generations;
  std::map<std::string, json> selections;
};

/// A torn final line (crash mid-write) is dropped; damage anywhere else is an error.
inline CheckpointState read_checkpoint(const fs::path& path) {
  CheckpointState state;
  if (!fs::exists(path)) return state;
  std::ifstream in(path, std::ios::binary);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json j = json::parse(lines[i], nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("kind")) {
      if (i + 1 == lines.size()) break;
      throw Error(Errc::corrupt_checkpoint,
                  "checkpoint line " + std::to_string(i + 1) + " is not valid JSON");
    }
    try {
      const auto kind = j["kind"].get<std::string>();
      if (kind == "header") {
        state.config_digest = j.at("config_digest").get<std::string>();
      } else if (kind == "translation") {
        state.translations[{j.at("sample").get<std::size_t>(), j.at("language").get<std::string>()}] =
            j.at("text").get<std::string>();
      } else if (kind == "paraphrase") {
        state.paraphrases[j.at("sample").get<std::size_t>()] =
            j.at("texts").get<std::vector<std::string>>();
      } else if (kind == "generation") {
        state.generations[j.at("item").get<std::size_t>()] =
            candidate_record_from_json(j.at("record"));
      } else if (kind == "selection") {
        state.selections[j.at("sample_id").get<std::string>()] = j;
      } else {
        throw Error(Errc::corrupt_checkpoint, "unknown checkpoint entry '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw Error(Errc::corrupt_checkpoint,
                  "checkpoint line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (!state.config_digest && !lines.empty()) {
    throw Error(Errc::corrupt_checkpoint, "checkpoint has no header line");
  }
  return state;
}

inline json run_snapshot(const RunPlan& plan) {
  json dataset = json::array();
  for (const auto& r : plan.dataset) dataset.push_back(to_json(r));
  return {{"schema", kManifestSchema},
          {"config_digest", plan.config_digest},
          {"config", to_json(plan.config)},
          {"dataset", dataset}};
}

inline std::string now_iso8601() { return utc_timestamp(); }

}  // namespace detail

struct ExecuteOptions {
  /// Stop (with Errc::interrupted) after this many generation items have
  /// run in this invocation. Used to exercise resume.
  std::optional<std::size_t> stop_after;
  /// Worker threads for generation; 0 uses the generate endpoint's limit.
  std::size_t workers = 0;
};

inline std::string build_prompt(const RunPlan& plan, const VariantSpec& variant,
                                 std::size_t sample_index,
                                 const std::map<std::string, std::string>& translations,
                                 const std::vector<std::string>* paraphrases) {
  const auto& record = plan.dataset[sample_index];
  const SourceText source = record.source();
  switch (variant.kind) {
    case AblationKind::english_only:
      return render_prompt(ParallelText(source, {}), {});
    case AblationKind::reduplication:
      return render_reduplication(source, plan.config.effective_ablation_n());
    case AblationKind::paraphrase:
      if (!paraphrases) {
        throw Error(Errc::empty_result, "no paraphrases available for sample '" + record.id + "'");
      }
      return render_paraphrase(source, *paraphrases);
    case AblationKind::pmt2i:
    case AblationKind::single_language: {
      std::vector<Translation> parallel;
      for (const auto& lang : plan.config.resolved_languages()) {
        auto it = translations.find(lang.code);
        if (it != translations.end()) parallel.push_back({lang, it->second});
      }
      for (const auto& code : variant.order) {
        if (!translations.count(code)) {
          throw Error(Errc::empty_result,
                      "no translation into '" + code + "' for sample '" + record.id + "'");
        }
      }
      const ParallelText text(source, std::move(parallel));
      if (variant.kind == AblationKind::single_language) {
        return render_single_language(text, variant.order.front());
      }
      return render_prompt(text, variant.order);
    }
  }
  throw Error(Errc::invalid_argument, "unknown variant kind");
}

inline Selection rerank_sample(const DatasetRecord& record, const std::vector<CandidateRecord>& ok,
                               const fs::path& run_dir, BackendClient& embedder) {
  std::vector<RerankInput> inputs;
  inputs.reserve(ok.size());
  for (const auto& c : ok) {
    inputs.push_back({c.ref(), GeneratedImage::from_png(read_file_bytes(run_dir / c.image_path),
                                                        c.seed, c.backend_id)});
  }
  return rerank_candidates(record.source(), inputs, embedder);
}

inline RunManifest execute_run(const RunPlan& plan, const Backends& backends,
                               const ExecuteOptions& options = {}) {
  const auto& config = plan.config;
  if (config.output_dir.empty()) throw Error(Errc::config, "no output directory configured");
  const fs::path run_dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(run_dir / "images", ec);
  if (ec) throw Error(Errc::io, "cannot create output directory '" + run_dir.string() + "'");
  check_translation_routes(plan, backends);
  BackendClient& generator = backends.get("generate");
  BackendClient& embedder = backends.get(config.rerank_endpoint);

  const fs::path checkpoint_path = run_dir / "checkpoint.jsonl";
  auto state = detail::read_checkpoint(checkpoint_path);
  if (state.config_digest && *state.config_digest != plan.config_digest) {
    throw Error(Errc::digest_mismatch,
                "'" + run_dir.string() + "' holds a run with a different configuration");
  }
  if (!state.config_digest) {
    write_file_atomic(run_dir / "run.json", detail::run_snapshot(plan).dump(2) + "\n");
    write_file_atomic(checkpoint_path, json{{"kind", "header"},
                                            {"config_digest", plan.config_digest},
                                            {"tool_version", kToolVersion}}
                                               .dump() +
                                           "\n");
  }
  detail::CheckpointLog log(checkpoint_path);
  std::mutex state_mutex;
  FailureTally failures;

  // Translations (pre-supplied ones never reach the backend).
  std::vector<std::size_t> pending_translations;
  for (std::size_t i = 0; i < plan.translations.size(); ++i) {
    const auto& t = plan.translations[i];
    if (!state.translations.count({t.sample_index, t.language})) pending_translations.push_back(i);
  }
  detail::parallel_for(pending_translations.size(), 16, [&](std::size_t k) {
    const auto& item = plan.translations[pending_translations[k]];
    const auto& record = plan.dataset[item.sample_index];
    try {
      auto text = backends.translator_for(item.language).translate(record.text, "en", item.language);
      log.append({{"kind", "translation"},
                  {"sample", item.sample_index},
                  {"language", item.language},
                  {"text", text}});
      std::lock_guard lock(state_mutex);
      state.translations[{item.sample_index, item.language}] = std::move(text);
    } catch (const Error& e) {
      if (config.fail_fast || !is_backend_error(e.code())) throw;
      std::lock_guard lock(state_mutex);
      ++failures.translations;
    }
  });

  // Paraphrases.
  std::vector<std::size_t> pending_paraphrases;
  for (auto s : plan.paraphrase_samples) {
    if (!state.paraphrases.count(s)) pending_paraphrases.push_back(s);
  }
  detail::parallel_for(pending_paraphrases.size(), 16, [&](std::size_t k) {
    const auto s = pending_paraphrases[k];
    try {
      auto texts = backends.get("paraphrase").paraphrase(plan.dataset[s].text,
                                                          config.effective_ablation_n());
      log.append({{"kind", "paraphrase"}, {"sample", s}, {"texts", texts}});
      std::lock_guard lock(state_mutex);
      state.paraphrases[s] = std::move(texts);
    } catch (const Error& e) {
      if (config.fail_fast || !is_backend_error(e.code())) throw;
    }
  });

  auto translations_of = [&](std::size_t s) {
    std::map<std::string, std::string> out = plan.dataset[s].translations;
    std::lock_guard lock(state_mutex);
    for (const auto& [key, text] : state.translations) {
      if (key.first == s) out[key.second] = text;
    }
    return out;
  };

  // Generation. Failed items are not checkpointed, so a resume retries them.
  std::vector<CandidateRecord> records(plan.generations.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < plan.generations.size(); ++i) {
    auto it = state.generations.find(i);
    if (it != state.generations.end() && it->second.ok && fs::exists(run_dir / it->second.image_path)) {
      records[i] = it->second;
    } else {
      pending.push_back(i);
    }
  }
  std::atomic<bool> stop{false};
  std::atomic<std::size_t> started{0};
  const std::size_t workers =
      options.workers != 0 ? options.workers
                           : static_cast<std::size_t>(generator.endpoint().max_in_flight);
  detail::parallel_for(
      pending.size(), workers,
      [&](std::size_t k) {
        if (options.stop_after && started.fetch_add(1) >= *options.stop_after) {
          stop = true;
          return;
        }
        const std::size_t index = pending[k];
        const auto& item = plan.generations[index];
        const auto& variant = plan.variants[item.variant_index];
        const auto& record = plan.dataset[item.sample_index];
        CandidateRecord out;
        out.sample_id = record.id;
        out.label = variant.label;
        out.rank = variant.rank;
        out.seed = item.seed;
        out.image_path = item.image_path;
        out.backend_id = generator.backend_id();
        out.started_at = detail::now_iso8601();
        const auto t0 = std::chrono::steady_clock::now();
        try {
          std::vector<std::string> paraphrases;
          bool have_paraphrases = false;
          {
            std::lock_guard lock(state_mutex);
            if (auto it = state.paraphrases.find(item.sample_index); it != state.paraphrases.end()) {
              paraphrases = it->second;
              have_paraphrases = true;
            }
          }
          out.prompt = build_prompt(plan, variant, item.sample_index, translations_of(item.sample_index),
                                    have_paraphrases ? &paraphrases : nullptr);
          const auto image = generator.generate_image(out.prompt, item.seed, config.image);
          const fs::path target = run_dir / item.image_path;
          fs::create_directories(target.parent_path());
          write_file_atomic(target, std::string_view(reinterpret_cast<const char*>(image.png_bytes.data()),
                                                     image.png_bytes.size()));
          out.backend_id = image.backend_id;
          out.ok = true;
        } catch (const Error& e) {
          const bool tolerated = is_backend_error(e.code()) || e.code() == Errc::invalid_argument;
          if (config.fail_fast || !tolerated) throw;
          out.ok = false;
          out.error = e.what();
        }
        out.duration_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (out.ok) log.append({{"kind", "generation"}, {"item", index}, {"record", to_json(out)}});
        records[index] = std::move(out);
      },
      &stop);
  if (stop) {
    throw Error(Errc::interrupted, "stopped after " + std::to_string(*options.stop_after) +
                                       " generation items; resume to finish the run");
  }

  // Selection per sample, in plan order.
  RunManifest manifest;
  manifest.config_digest = plan.config_digest;
  for (const auto& r : plan.dataset) manifest.sample_ids.push_back(r.id);
  manifest.candidates = records;
  for (const auto& r : records) {
    if (!r.ok) ++failures.candidates;
  }
  for (std::size_t s = 0; s < plan.dataset.size(); ++s) {
    const auto& record = plan.dataset[s];
    std::vector<CandidateRecord> ok;
    json covered = json::array();
    for (const auto& r : records) {
      if (r.sample_id == record.id && r.ok) {
        ok.push_back(r);
        covered.push_back(r.label + "_" + std::to_string(r.seed));
      }
    }
    SampleSelection sel;
    sel.sample_id = record.id;
    auto cached = state.selections.find(record.id);
    if (cached != state.selections.end() && cached->second.value("covers", json()) == covered) {
      sel = sample_selection_from_json(cached->second.at("entry"));
    } else if (ok.empty()) {
      sel.ok = false;
      sel.error = "all candidates failed";
    } else {
      try {
        sel.selection = rerank_sample(record, ok, run_dir, embedder);
        sel.ok = true;
      } catch (const Error& e) {
        if (config.fail_fast || !(is_backend_error(e.code()) || e.code() == Errc::zero_norm)) throw;
        sel.ok = false;
        sel.error = e.what();
      }
      if (sel.ok) {
        log.append({{"kind", "selection"},
                    {"sample_id", record.id},
                    {"covers", covered},
                    {"entry", to_json(sel)}});
      }
    }
    if (!sel.ok) ++failures.samples;
    manifest.selections.push_back(std::move(sel));
  }
  manifest.failures = failures;
  write_manifest(run_dir, manifest);
  return manifest;
}

struct LoadedRun {
  RunConfig config;
  std::vector<DatasetRecord> dataset;
  std::string config_digest;
};

inline LoadedRun load_run(const fs::path& run_dir) {
  const auto path = run_dir / "run.json";
  if (!fs::exists(path)) throw Error(Errc::io, "'" + run_dir.string() + "' is not a run directory");
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(Errc::corrupt_checkpoint, "'" + path.string() + "' is not valid JSON");
  }
  LoadedRun run;
  run.config = run_config_from_json(j.at("config"));
  try {
    for (std::size_t i = 0; i < j.at("dataset").size(); ++i) {
      run.dataset.push_back(detail::record_from_json(j["dataset"][i], i + 1));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::corrupt_checkpoint, std::string("run.json: ") + e.what());
  }
  run.config_digest = config_digest(run.config, run.dataset);
  return run;
}

/// Finishes an interrupted run. A completed run is returned unchanged; a
/// run whose stored configuration no longer matches its checkpoint (or
/// `expected`, when given) is refused.
inline RunManifest resume_run(const fs::path& run_dir, const Backends& backends,
                              const std::optional<RunConfig>& expected = std::nullopt,
                              const ExecuteOptions& options = {}) {
  LoadedRun run = load_run(run_dir);
  const auto state = detail::read_checkpoint(run_dir / "checkpoint.jsonl");
  if (!state.config_digest) {
    throw Error(Errc::corrupt_checkpoint, "'" + run_dir.string() + "' has no checkpoint");
  }
  if (*state.config_digest != run.config_digest) {
    throw Error(Errc::digest_mismatch,
                "stored configuration was edited after the run started (digest mismatch)");
  }
  if (expected && config_digest(*expected, run.dataset) != run.config_digest) {
    throw Error(Errc::digest_mismatch, "configuration differs from the one this run was started with");
  }
  if (fs::exists(run_dir / "manifest.json")) {
    auto manifest = read_manifest(run_dir);
    if (manifest.config_digest == run.config_digest) return manifest;
  }
  run.config.output_dir = run_dir.string();
  if (expected) {
    run.config.endpoints = expected->endpoints;
    run.config.fail_fast = expected->fail_fast;
  }
  return execute_run(plan_run(run.config, run.dataset), backends, options);
}

/// Recomputes every selection of a finished run with another embedder and
/// rewrites the manifest.
inline RunManifest rerank_run(const fs::path& run_dir, BackendClient& embedder) {
  LoadedRun run = load_run(run_dir);
  RunManifest manifest = read_manifest(run_dir);
  manifest.failures.samples = 0;
  for (std::size_t s = 0; s < run.dataset.size(); ++s) {
    const auto& record = run.dataset[s];
    std::vector<CandidateRecord> ok;
    for (const auto& c : manifest.candidates) {
      if (c.sample_id == record.id && c.ok) ok.push_back(c);
    }
    SampleSelection sel;
    sel.sample_id = record.id;
    if (ok.empty()) {
      sel.error = "all candidates failed";
    } else {
      try {
        sel.selection = rerank_sample(record, ok, run_dir, embedder);
        sel.ok = true;
      } catch (const Error& e) {
        if (!is_backend_error(e.code()) && e.code() != Errc::zero_norm) throw;
        sel.error = e.what();
      }
    }
    if (!sel.ok) ++manifest.failures.samples;
    auto it = std::find_if(manifest.selections.begin(), manifest.selections.end(),
                           [&](const SampleSelection& x) { return x.sample_id == record.id; });
    if (it == manifest.selections.end()) {
      manifest.selections.push_back(std::move(sel));
    } else {
      *it = std::move(sel);
    }
  }
  write_manifest(run_dir, manifest);
  return manifest;
}

}  // namespace pmt2i
