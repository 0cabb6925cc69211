#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pmt2i/client.hpp"
#include "pmt2i/dataset.hpp"
#include "pmt2i/digest.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/language.hpp"
#include "pmt2i/prompt.hpp"

namespace pmt2i {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct SampleSpec {
  std::size_t n = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const SampleSpec&, const SampleSpec&) = default;
};

struct RunConfig {
  std::string dataset_path;
  std::vector<std::string> languages;
  /// Display names for codes missing from the built-in exonym table.
  std::map<std::string, std::string> language_names;
  AblationKind ablation = AblationKind::pmt2i;
  /// Duplicate or paraphrase count for those ablations; 0 means |languages|.
  std::size_t ablation_n = 0;
  VariantStrategy variant_strategy = VariantStrategy::all();
  /// Explicit language orders; when nonempty they replace variant_strategy.
  std::vector<std::vector<std::string>> variants;
  std::vector<std::int64_t> seeds{1};
  ImageParams image;
  RoutingTable endpoints;
  std::string output_dir;
  std::string rerank_endpoint = "embed";
  std::optional<std::string> judge_template_id;
  std::optional<SampleSpec> sample;
  bool fail_fast = false;
  std::string cache_dir;

  std::size_t effective_ablation_n() const {
    return ablation_n != 0 ? ablation_n : languages.size();
  }

  std::vector<Language> resolved_languages() const {
    return languages_from_codes(languages, language_names);
  }

  /// Checks everything that can be checked without the dataset or network.
  void validate() const {
    if (dataset_path.empty()) throw Error(Errc::config, "no dataset configured");
    (void)resolved_languages();
    const bool needs_languages =
        ablation == AblationKind::pmt2i || ablation == AblationKind::single_language;
    if (needs_languages && languages.empty()) {
      throw Error(Errc::config, "ablation '" + std::string(to_string(ablation)) +
                                    "' needs at least one language");
    }
    if ((ablation == AblationKind::reduplication || ablation == AblationKind::paraphrase) &&
        effective_ablation_n() == 0) {
      throw Error(Errc::config, "ablation '" + std::string(to_string(ablation)) +
                                    "' needs ablation_n >= 1 (or a nonempty language list)");
    }
    if (seeds.empty()) throw Error(Errc::config, "seeds must not be empty");
    if (std::set<std::int64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw Error(Errc::config, "seeds must be distinct");
    }
    if (image.width < 1 || image.height < 1) throw Error(Errc::config, "image size must be >= 1x1");
    for (const auto& order : variants) {
      if (order.empty()) throw Error(Errc::config, "explicit variants must not be empty");
      (void)variant_rank(order, languages);
    }
    for (const auto& [name, endpoint] : endpoints) {
      validate_capability_name(name);
      endpoint.validate();
    }
    auto require = [&](const std::string& capability) {
      if (!endpoints.count(capability)) {
        throw Error(Errc::config, "no endpoint configured for '" + capability + "'");
      }
    };
    require("generate");
    require(rerank_endpoint);
    if (ablation == AblationKind::paraphrase) require("paraphrase");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline json to_json(const RunConfig& c) {
  json j = {{"dataset", c.dataset_path},
            {"languages", c.languages},
            {"ablation", to_string(c.ablation)},
            {"variant_strategy", to_string(c.variant_strategy)},
            {"seeds", c.seeds},
            {"image", {{"width", c.image.width}, {"height", c.image.height}}},
            {"endpoints", to_json(c.endpoints)},
            {"rerank_endpoint", c.rerank_endpoint},
            {"fail_fast", c.fail_fast}};
  if (!c.language_names.empty()) j["language_names"] = c.language_names;
  if (c.ablation_n != 0) j["ablation_n"] = c.ablation_n;
  if (!c.variants.empty()) j["variants"] = c.variants;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  if (c.judge_template_id) j["judge_template_id"] = *c.judge_template_id;
  if (c.sample) j["sample"] = {{"n", c.sample->n}, {"seed", c.sample->seed}};
  if (!c.cache_dir.empty()) j["cache_dir"] = c.cache_dir;
  return j;
}

/// Strict parse: unknown keys are rejected.
inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown_keys(
      j,
      {"dataset", "languages", "language_names", "ablation", "ablation_n", "variant_strategy",
       "variants", "seeds", "image", "endpoints", "output_dir", "rerank_endpoint",
       "judge_template_id", "sample", "fail_fast", "cache_dir"},
      "config");
  RunConfig c;
  try {
    c.dataset_path = j.value("dataset", std::string());
    c.languages = j.value("languages", std::vector<std::string>{});
    c.language_names = j.value("language_names", std::map<std::string, std::string>{});
    if (j.contains("ablation")) c.ablation = parse_ablation_kind(j["ablation"].get<std::string>());
    c.ablation_n = j.value("ablation_n", std::size_t{0});
    if (j.contains("variant_strategy")) {
      c.variant_strategy = parse_variant_strategy(j["variant_strategy"].get<std::string>());
    }
    c.variants = j.value("variants", std::vector<std::vector<std::string>>{});
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("image")) {
      detail::reject_unknown_keys(j["image"], {"width", "height"}, "config.image");
      c.image.width = j["image"].value("width", c.image.width);
      c.image.height = j["image"].value("height", c.image.height);
    }
    if (j.contains("endpoints")) c.endpoints = routing_from_json(j["endpoints"]);
    c.output_dir = j.value("output_dir", std::string());
    c.rerank_endpoint = j.value("rerank_endpoint", c.rerank_endpoint);
    if (j.contains("judge_template_id") && !j["judge_template_id"].is_null()) {
      c.judge_template_id = j["judge_template_id"].get<std::string>();
    }
    if (j.contains("sample") && !j["sample"].is_null()) {
      detail::reject_unknown_keys(j["sample"], {"n", "seed"}, "config.sample");
      c.sample = SampleSpec{j["sample"].at("n").get<std::size_t>(),
                            j["sample"].value("seed", std::uint64_t{0})};
    }
    c.fail_fast = j.value("fail_fast", false);
    c.cache_dir = j.value("cache_dir", std::string());
  } catch (const json::exception& e) {
    throw Error(Errc::config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::config) throw;
    throw Error(Errc::config, std::string("config: ") + e.what());
  }
  return c;
}

/// Identity of a run: everything that influences its outputs. Output
/// location, cache location, timeouts and concurrency limits are excluded.
inline std::string config_digest(const RunConfig& c, const std::vector<DatasetRecord>& dataset) {
  json semantic = to_json(c);
  semantic.erase("output_dir");
  semantic.erase("cache_dir");
  semantic.erase("fail_fast");
  semantic.erase("dataset");
  json endpoints = json::object();
  for (const auto& [name, e] : c.endpoints) {
    endpoints[name] = {{"base_url", e.base_url}, {"model_id", e.model_id}};
  }
  semantic["endpoints"] = endpoints;
  semantic["dataset_sha256"] = sha256_hex(to_jsonl(dataset));
  return sha256_hex(canonical_json(semantic));
}

/// Loads the configured dataset and applies the configured sampling.
inline std::vector<DatasetRecord> load_run_dataset(const RunConfig& c) {
  auto records = load_prompts(c.dataset_path);
  if (c.sample) records = sample(records, c.sample->n, c.sample->seed);
  return records;
}

}  // namespace pmt2i
