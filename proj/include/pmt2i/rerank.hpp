#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmt2i/client.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/prompt.hpp"

namespace pmt2i {

/// (u . v) / (|u| |v|), clamped to [-1, 1].
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(Errc::dim_mismatch, "cosine of vectors with dims " + std::to_string(u.size()) +
                                        " and " + std::to_string(v.size()));
  }
  if (u.empty()) throw Error(Errc::zero_norm, "cosine of empty vectors");
  double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0 || vv == 0) throw Error(Errc::zero_norm, "cosine of a zero-norm vector");
  if (!std::isfinite(dot) || !std::isfinite(uu) || !std::isfinite(vv)) {
    throw Error(Errc::invalid_argument, "cosine of non-finite vectors");
  }
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

inline double cosine(const Embedding& u, const Embedding& v) { return cosine(u.values, v.values); }

/// Index of the maximum; ties go to the lowest index.
inline std::size_t select_best(std::span<const double> scores) {
  if (scores.empty()) throw Error(Errc::invalid_argument, "cannot select from an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw Error(Errc::invalid_argument, "score " + std::to_string(i) + " is not finite");
    }
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

/// Element k-1 is the best score among the first k candidates.
inline std::vector<double> best_of_k_curve(std::span<const double> scores) {
  if (scores.empty()) throw Error(Errc::invalid_argument, "best-of-k of an empty score list");
  std::vector<double> curve;
  curve.reserve(scores.size());
  double best = scores[0];
  for (double s : scores) {
    best = std::max(best, s);
    curve.push_back(best);
  }
  return curve;
}

struct CandidateRef {
  std::string sample_id;
  /// Variant rank as decimal text, or an ablation label such as "en".
  std::string label;
  std::int64_t seed = 0;

  friend bool operator==(const CandidateRef&, const CandidateRef&) = default;
};

struct ScoredCandidate {
  CandidateRef candidate;
  double score = 0;

  friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

struct Selection {
  std::vector<ScoredCandidate> scores;
  std::size_t chosen_index = 0;
  std::string scorer_model_id;

  const ScoredCandidate& chosen() const { return scores.at(chosen_index); }

  friend bool operator==(const Selection&, const Selection&) = default;
};

inline Selection select(std::vector<ScoredCandidate> scores, std::string scorer_model_id) {
  std::vector<double> values;
  values.reserve(scores.size());
  for (const auto& s : scores) values.push_back(s.score);
  const std::size_t chosen = select_best(values);
  return {std::move(scores), chosen, std::move(scorer_model_id)};
}

struct RerankInput {
  CandidateRef ref;
  GeneratedImage image;
};

/// Scores each candidate by cosine against the source caption (never the
/// multilingual prompt) and picks the argmax. Candidates whose embedding
/// request fails are left out of the scores; if all fail, the first error
/// propagates.
inline Selection rerank_candidates(const SourceText& text, std::span<const RerankInput> candidates,
                                   BackendClient& embedder) {
  if (candidates.empty()) throw Error(Errc::invalid_argument, "no candidates to rerank");
  const Embedding text_embedding = embedder.embed_text(text.text);

  std::vector<std::future<Embedding>> pending;
  pending.reserve(candidates.size());
  for (const auto& c : candidates) {
    pending.push_back(std::async(std::launch::async,
                                 [&embedder, &c] { return embedder.embed_image(c.image); }));
  }
  std::vector<ScoredCandidate> scores;
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    try {
      const Embedding image_embedding = pending[i].get();
      scores.push_back({candidates[i].ref, cosine(text_embedding, image_embedding)});
    } catch (const Error& e) {
      if (!is_backend_error(e.code()) && e.code() != Errc::zero_norm) throw;
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (scores.empty()) std::rethrow_exception(first_error);
  return select(std::move(scores),
                text_embedding.model_id.empty() ? embedder.endpoint().model_identity()
                                                : text_embedding.model_id);
}

inline json to_json(const CandidateRef& ref) {
  return {{"sample_id", ref.sample_id}, {"label", ref.label}, {"seed", ref.seed}};
}

inline CandidateRef candidate_ref_from_json(const json& j) {
  return {j.at("sample_id").get<std::string>(), j.at("label").get<std::string>(),
          j.at("seed").get<std::int64_t>()};
}

inline json to_json(const Selection& s) {
  json scores = json::array();
  for (const auto& c : s.scores) {
    json entry = to_json(c.candidate);
    entry["score"] = c.score;
    scores.push_back(entry);
  }
  return {{"scores", scores}, {"chosen_index", s.chosen_index}, {"scorer_model_id", s.scorer_model_id}};
}

inline Selection selection_from_json(const json& j) {
  Selection s;
  for (const auto& entry : j.at("scores")) {
    s.scores.push_back({candidate_ref_from_json(entry), entry.at("score").get<double>()});
  }
  s.chosen_index = j.at("chosen_index").get<std::size_t>();
  s.scorer_model_id = j.value("scorer_model_id", std::string());
  if (s.chosen_index >= s.scores.size()) {
    throw Error(Errc::parse, "selection chosen_index out of bounds");
  }
  return s;
}

}  // namespace pmt2i
