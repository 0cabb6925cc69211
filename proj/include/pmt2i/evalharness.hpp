#pragma once

// Metrics over a completed (or partially completed) run and Table-style
// report output. Scores stay raw internally; the x100 and percentage
// conventions are applied only when formatting cells.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmt2i/client.hpp"
#include "pmt2i/dataset.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/image.hpp"
#include "pmt2i/pipeline.hpp"
#include "pmt2i/rerank.hpp"

namespace pmt2i {

// ---------------------------------------------------------------------------
// Arithmetic.

inline double mean(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::no_valid_samples, "no valid samples to average");
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

inline double correct_proportion(std::span<const Verdict> verdicts) {
  if (verdicts.empty()) throw Error(Errc::no_valid_samples, "no verdicts to aggregate");
  std::size_t correct = 0;
  for (auto v : verdicts) correct += v == Verdict::correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(verdicts.size());
}

/// Disentangled attribute binding: the product of per-question probabilities.
inline double bvqa_sample_score(std::span<const double> probabilities) {
  if (probabilities.empty()) throw Error(Errc::invalid_argument, "sample has no VQA questions");
  double product = 1;
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(Errc::out_of_range, "VQA probability " + std::to_string(p) + " outside [0, 1]");
    }
    product *= p;
  }
  return product;
}

/// Mean absolute difference per pixel per channel, with values scaled to [0, 1].
inline double l1_distance(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw Error(Errc::dim_mismatch, "L1 distance needs images of identical shape");
  }
  if (a.pixels.empty()) throw Error(Errc::invalid_argument, "L1 distance of empty images");
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    sum += static_cast<std::uint64_t>(std::abs(int(a.pixels[i]) - int(b.pixels[i])));
  }
  return static_cast<double>(sum) / (255.0 * static_cast<double>(a.pixels.size()));
}

inline constexpr std::uint32_t kDiversitySide = 256;

/// Mean pairwise L1 distance after converting every image to RGB and
/// resizing it bilinearly to side x side.
inline double l1_diversity(std::span<const Image> images, std::uint32_t side = kDiversitySide) {
  if (images.size() < 2) throw Error(Errc::invalid_argument, "L1 diversity needs at least 2 candidates");
  std::vector<Image> canonical;
  canonical.reserve(images.size());
  for (const auto& img : images) canonical.push_back(resize_bilinear(to_rgb(img), side, side));
  double sum = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    for (std::size_t j = i + 1; j < canonical.size(); ++j) {
      sum += l1_distance(canonical[i], canonical[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Metrics over a run.

enum class Metric { clip_t, clip_i, dino, reward, correct_proportion, bvqa, l1_diversity };

inline constexpr std::array<Metric, 7> kAllMetrics{Metric::clip_t, Metric::clip_i,
                                                   Metric::dino,   Metric::reward,
                                                   Metric::correct_proportion,
                                                   Metric::bvqa,   Metric::l1_diversity};

constexpr std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::clip_t: return "clip_t";
    case Metric::clip_i: return "clip_i";
    case Metric::dino: return "dino";
    case Metric::reward: return "reward";
    case Metric::correct_proportion: return "correct_proportion";
    case Metric::bvqa: return "bvqa";
    case Metric::l1_diversity: return "l1_diversity";
  }
  return "";
}

constexpr std::string_view column_title(Metric m) noexcept {
  switch (m) {
    case Metric::clip_t: return "CLIP-T";
    case Metric::clip_i: return "CLIP-I";
    case Metric::dino: return "DINO";
    case Metric::reward: return "Reward";
    case Metric::correct_proportion: return "Correct";
    case Metric::bvqa: return "B-VQA";
    case Metric::l1_diversity: return "L1";
  }
  return "";
}

inline Metric parse_metric(std::string_view text) {
  for (auto m : kAllMetrics) {
    if (to_string(m) == text) return m;
  }
  if (text == "correct" || text == "judge") return Metric::correct_proportion;
  throw Error(Errc::invalid_argument, "unknown metric '" + std::string(text) + "'");
}

/// The capability each metric scores through.
inline std::string metric_endpoint(Metric m, const RunConfig& config) {
  switch (m) {
    case Metric::clip_t: return config.rerank_endpoint;
    case Metric::clip_i: return "embed_clip_i";
    case Metric::dino: return "embed_dino";
    case Metric::reward: return "reward";
    case Metric::correct_proportion: return "judge";
    case Metric::bvqa: return "vqa";
    case Metric::l1_diversity: return "";
  }
  return "";
}

/// What a metric sees of a run.
struct EvalInputs {
  fs::path run_dir;
  RunConfig config;
  std::vector<DatasetRecord> dataset;
  RunManifest manifest;
  /// Average over every successful candidate instead of the selected one.
  bool all_candidates = false;

  static EvalInputs load(const fs::path& run_dir, bool all_candidates = false) {
    LoadedRun run = load_run(run_dir);
    return {run_dir, std::move(run.config), std::move(run.dataset), read_manifest(run_dir),
            all_candidates};
  }

  /// Images scored for a sample: the selection, or all successful candidates.
  std::vector<const CandidateRecord*> scored_candidates(const std::string& sample_id) const {
    std::vector<const CandidateRecord*> out;
    if (all_candidates) {
      for (const auto& c : manifest.candidates) {
        if (c.sample_id == sample_id && c.ok) out.push_back(&c);
      }
      return out;
    }
    for (const auto& s : manifest.selections) {
      if (s.sample_id != sample_id || !s.ok || !s.selection) continue;
      const auto& chosen = s.selection->chosen().candidate;
      for (const auto& c : manifest.candidates) {
        if (c.ok && c.ref() == chosen) out.push_back(&c);
      }
    }
    return out;
  }

  GeneratedImage image_of(const CandidateRecord& c) const {
    return GeneratedImage::from_png(read_file_bytes(run_dir / c.image_path), c.seed, c.backend_id);
  }
};

struct MetricResult {
  double mean = 0;
  std::size_t count = 0;
  std::size_t excluded = 0;
  std::map<std::string, double> per_sample;
  std::map<std::string, std::string> errors;
};

namespace detail {

inline bool excludable(const Error& e) {
  return is_backend_error(e.code()) || e.code() == Errc::zero_norm || e.code() == Errc::io ||
         e.code() == Errc::invalid_image || e.code() == Errc::out_of_range;
}

/// Folds per-sample values in sample order; a sample whose scoring throws an
/// excludable error is left out and tallied.
template <typename PerSample>
MetricResult fold_samples(const EvalInputs& in, PerSample&& per_sample) {
  MetricResult out;
  std::vector<double> values;
  for (const auto& record : in.dataset) {
    try {
      std::optional<double> value = per_sample(record);
      if (!value) {
        ++out.excluded;
        out.errors[record.id] = "no scorable candidate";
        continue;
      }
      values.push_back(*value);
      out.per_sample[record.id] = *value;
    } catch (const Error& e) {
      if (!excludable(e)) throw;
      ++out.excluded;
      out.errors[record.id] = e.what();
    }
  }
  out.count = values.size();
  out.mean = pmt2i::mean(values);
  return out;
}

/// Mean of fn(image) over the sample's scored candidates.
template <typename Fn>
std::optional<double> over_candidates(const EvalInputs& in, const DatasetRecord& record, Fn&& fn) {
  const auto candidates = in.scored_candidates(record.id);
  if (candidates.empty()) return std::nullopt;
  std::vector<double> values;
  for (const auto* c : candidates) values.push_back(fn(in.image_of(*c)));
  return pmt2i::mean(values);
}

}  // namespace detail

inline MetricResult metric_clip_t(const EvalInputs& in, BackendClient& embedder) {
  return detail::fold_samples(in, [&](const DatasetRecord& record) {
    const auto text = embedder.embed_text(record.text);
    return detail::over_candidates(in, record, [&](const GeneratedImage& img) {
      return cosine(text, embedder.embed_image(img));
    });
  });
}

enum class SimilarityFlavor { clip_i, dino };

/// Cosine between each scored image and the sample's reference image under
/// the flavor's encoder.
inline MetricResult metric_image_similarity(const EvalInputs& in, BackendClient& embedder,
                                            SimilarityFlavor /*flavor*/) {
  return detail::fold_samples(in, [&](const DatasetRecord& record) -> std::optional<double> {
    if (!record.reference_image) throw Error(Errc::io, "sample has no reference image");
    const auto path = resolve_reference(in.config.dataset_path, *record.reference_image);
    const auto reference = embedder.embed_image(GeneratedImage::from_png(read_file_bytes(path)));
    return detail::over_candidates(in, record, [&](const GeneratedImage& img) {
      return cosine(reference, embedder.embed_image(img));
    });
  });
}

inline MetricResult metric_correct_proportion(const EvalInputs& in, BackendClient& judge) {
  return detail::fold_samples(in, [&](const DatasetRecord& record) {
    return detail::over_candidates(in, record, [&](const GeneratedImage& img) {
      const Verdict v = judge.judge(record.text, img, in.config.judge_template_id);
      return correct_proportion(std::span<const Verdict>(&v, 1));
    });
  });
}

inline MetricResult mean_reward(const EvalInputs& in, BackendClient& reward) {
  return detail::fold_samples(in, [&](const DatasetRecord& record) {
    return detail::over_candidates(
        in, record, [&](const GeneratedImage& img) { return reward.reward(record.text, img); });
  });
}

inline MetricResult bvqa_aggregate(const EvalInputs& in, BackendClient& vqa) {
  return detail::fold_samples(in, [&](const DatasetRecord& record) -> std::optional<double> {
    if (record.questions.empty()) throw Error(Errc::io, "sample has no VQA questions");
    return detail::over_candidates(in, record, [&](const GeneratedImage& img) {
      std::vector<double> probabilities;
      for (const auto& q : record.questions) probabilities.push_back(vqa.vqa(q, img));
      return bvqa_sample_score(probabilities);
    });
  });
}

/// Diversity always spans all successful candidates of a sample.
inline MetricResult metric_l1_diversity(const EvalInputs& in) {
  return detail::fold_samples(in, [&](const DatasetRecord& record) -> std::optional<double> {
    std::vector<Image> images;
    for (const auto& c : in.manifest.candidates) {
      if (c.sample_id == record.id && c.ok) {
        images.push_back(decode_png(read_file_bytes(in.run_dir / c.image_path)));
      }
    }
    if (images.size() < 2) return std::nullopt;
    return l1_diversity(images);
  });
}

// ---------------------------------------------------------------------------
// Reports.

struct MetricSummary {
  std::optional<double> mean;
  std::size_t count = 0;
  std::size_t excluded = 0;
};

struct SampleDetail {
  std::string sample_id;
  std::map<Metric, double> values;
  std::map<Metric, std::string> errors;
};

struct EvalReport {
  std::string config_digest;
  bool all_candidates = false;
  std::map<Metric, MetricSummary> metrics;
  std::size_t samples = 0;
  std::size_t failed_samples = 0;
  std::vector<SampleDetail> details;
};

struct EvalOptions {
  std::vector<Metric> metrics{Metric::clip_t};
  bool all_candidates = false;
};

/// Fails with Errc::config when a requested metric lacks its endpoint or data.
inline void check_metric_prerequisites(const EvalInputs& in, const Backends& backends,
                                       std::span<const Metric> metrics) {
  for (auto m : metrics) {
    const auto endpoint = metric_endpoint(m, in.config);
    if (!endpoint.empty() && !backends.has(endpoint)) {
      throw Error(Errc::config, "metric '" + std::string(to_string(m)) + "' needs an '" + endpoint +
                                    "' endpoint");
    }
    if (m == Metric::clip_i || m == Metric::dino) {
      bool any = false;
      for (const auto& r : in.dataset) any = any || r.reference_image.has_value();
      if (!any) {
        throw Error(Errc::config, "metric '" + std::string(to_string(m)) +
                                      "' needs reference images in the dataset");
      }
    }
    if (m == Metric::bvqa) {
      bool any = false;
      for (const auto& r : in.dataset) any = any || !r.questions.empty();
      if (!any) throw Error(Errc::config, "metric 'bvqa' needs questions in the dataset");
    }
  }
}

inline EvalReport evaluate(const EvalInputs& in, const Backends& backends, const EvalOptions& options) {
  check_metric_prerequisites(in, backends, options.metrics);
  EvalReport report;
  report.config_digest = in.manifest.config_digest;
  report.all_candidates = in.all_candidates;
  report.samples = in.dataset.size();
  report.failed_samples = in.manifest.failures.samples;
  for (const auto& r : in.dataset) report.details.push_back({r.id, {}, {}});

  for (auto m : options.metrics) {
    if (report.metrics.count(m)) continue;
    MetricResult result;
    MetricSummary summary;
    try {
      switch (m) {
        case Metric::clip_t: result = metric_clip_t(in, backends.get(metric_endpoint(m, in.config))); break;
        case Metric::clip_i:
          result = metric_image_similarity(in, backends.get("embed_clip_i"), SimilarityFlavor::clip_i);
          break;
        case Metric::dino:
          result = metric_image_similarity(in, backends.get("embed_dino"), SimilarityFlavor::dino);
          break;
        case Metric::reward: result = mean_reward(in, backends.get("reward")); break;
        case Metric::correct_proportion:
          result = metric_correct_proportion(in, backends.get("judge"));
          break;
        case Metric::bvqa: result = bvqa_aggregate(in, backends.get("vqa")); break;
        case Metric::l1_diversity: result = metric_l1_diversity(in); break;
      }
      summary = {result.mean, result.count, result.excluded};
    } catch (const Error& e) {
      if (e.code() != Errc::no_valid_samples) throw;
      summary = {std::nullopt, 0, in.dataset.size()};
    }
    report.metrics[m] = summary;
    for (auto& d : report.details) {
      if (auto it = result.per_sample.find(d.sample_id); it != result.per_sample.end()) {
        d.values[m] = it->second;
      }
      if (auto it = result.errors.find(d.sample_id); it != result.errors.end()) d.errors[m] = it->second;
    }
  }
  return report;
}

inline EvalReport evaluate_run(const fs::path& run_dir, const Backends& backends,
                               const EvalOptions& options) {
  return evaluate(EvalInputs::load(run_dir, options.all_candidates), backends, options);
}

namespace detail {

inline std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string out = buf;
  // "-0.0" reads as a sign error in a table.
  if (out.front() == '-' && out.find_first_not_of("-0.") == std::string::npos) out.erase(0, 1);
  return out;
}

}  // namespace detail

inline constexpr std::string_view kMissingCell = "—";

/// One table cell: x100 with 1 decimal for similarity metrics, 3 decimals for
/// reward and L1, percentages with 1 decimal for proportions.
inline std::string format_metric(Metric m, std::optional<double> value) {
  if (!value) return std::string(kMissingCell);
  switch (m) {
    case Metric::clip_t:
    case Metric::clip_i:
    case Metric::dino: return detail::format_fixed(*value * 100.0, 1);
    case Metric::reward:
    case Metric::l1_diversity: return detail::format_fixed(*value, 3);
    case Metric::correct_proportion:
    case Metric::bvqa: return detail::format_fixed(*value * 100.0, 1) + "%";
  }
  return std::string(kMissingCell);
}

struct ReportTable {
  std::string markdown;
  std::string csv;
};

namespace detail {

inline std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string markdown_cell(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '|') out.push_back('\\');
    out.push_back(c == '\n' ? ' ' : c);
  }
  return out;
}

}  // namespace detail

/// One row per report; columns are the metrics present in any report, in
/// canonical order. Gaps render as "—".
inline ReportTable report_table(std::span<const EvalReport> reports, std::span<const std::string> labels) {
  if (reports.size() != labels.size()) {
    throw Error(Errc::invalid_argument, std::to_string(reports.size()) + " reports but " +
                                            std::to_string(labels.size()) + " labels");
  }
  std::vector<Metric> columns;
  for (auto m : kAllMetrics) {
    for (const auto& r : reports) {
      if (r.metrics.count(m)) {
        columns.push_back(m);
        break;
      }
    }
  }
  ReportTable table;
  table.markdown = "| System |";
  table.csv = "system";
  for (auto m : columns) {
    table.markdown += " " + std::string(column_title(m)) + " |";
    table.csv += "," + std::string(column_title(m));
  }
  table.markdown += "\n|:--|";
  for (std::size_t i = 0; i < columns.size(); ++i) table.markdown += "--:|";
  table.markdown += "\n";
  table.csv += "\n";
  for (std::size_t row = 0; row < reports.size(); ++row) {
    table.markdown += "| " + detail::markdown_cell(labels[row]) + " |";
    table.csv += detail::csv_field(labels[row]);
    for (auto m : columns) {
      std::optional<double> value;
      if (auto it = reports[row].metrics.find(m); it != reports[row].metrics.end()) {
        value = it->second.mean;
      }
      const auto cell = format_metric(m, value);
      table.markdown += " " + cell + " |";
      table.csv += "," + detail::csv_field(cell);
    }
    table.markdown += "\n";
    table.csv += "\n";
  }
  return table;
}

inline json to_json(const EvalReport& r) {
  json metrics = json::object();
  for (const auto& [m, s] : r.metrics) {
    metrics[std::string(to_string(m))] = {{"mean", s.mean ? json(*s.mean) : json(nullptr)},
                                          {"count", s.count},
                                          {"excluded", s.excluded}};
  }
  return {{"config_digest", r.config_digest},
          {"mode", r.all_candidates ? "all_candidates" : "selected"},
          {"samples", r.samples},
          {"failed_samples", r.failed_samples},
          {"metrics", metrics}};
}

inline EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.all_candidates = j.value("mode", std::string()) == "all_candidates";
    r.samples = j.value("samples", std::size_t{0});
    r.failed_samples = j.value("failed_samples", std::size_t{0});
    for (const auto& [name, s] : j.at("metrics").items()) {
      MetricSummary summary;
      if (!s.at("mean").is_null()) summary.mean = s["mean"].get<double>();
      summary.count = s.value("count", std::size_t{0});
      summary.excluded = s.value("excluded", std::size_t{0});
      r.metrics[parse_metric(name)] = summary;
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("report.json: ") + e.what());
  }
}

inline std::string details_jsonl(const EvalReport& r) {
  std::string out;
  for (const auto& d : r.details) {
    json values = json::object();
    for (const auto& [m, v] : d.values) values[std::string(to_string(m))] = v;
    json line = {{"sample_id", d.sample_id}, {"values", values}};
    if (!d.errors.empty()) {
      json errors = json::object();
      for (const auto& [m, e] : d.errors) errors[std::string(to_string(m))] = e;
      line["errors"] = errors;
    }
    out += line.dump() + "\n";
  }
  return out;
}

/// Writes report.md, report.csv, report.json and details.jsonl into `dir`.
inline void write_report_files(const fs::path& dir, const EvalReport& report, const std::string& label) {
  fs::create_directories(dir);
  const EvalReport one[] = {report};
  const std::string labels[] = {label};
  const auto table = report_table(one, labels);
  write_file_atomic(dir / "report.md", table.markdown);
  write_file_atomic(dir / "report.csv", table.csv);
  write_file_atomic(dir / "report.json", to_json(report).dump(2) + "\n");
  write_file_atomic(dir / "details.jsonl", details_jsonl(report));
}

inline EvalReport read_report(const fs::path& run_dir) {
  const auto path = run_dir / "report.json";
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::parse, "'" + path.string() + "' is not valid JSON");
  return eval_report_from_json(j);
}

}  // namespace pmt2i
