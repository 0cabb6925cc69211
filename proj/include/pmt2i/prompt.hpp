#pragma once

// Parallel multilingual prompt construction and the language-order variant
// space. Everything here is a pure function over immutable values.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmt2i/error.hpp"
#include "pmt2i/language.hpp"
#include "pmt2i/random.hpp"

namespace pmt2i {

struct SourceText {
  std::string id;
  std::string text;

  friend bool operator==(const SourceText&, const SourceText&) = default;
};

struct Translation {
  Language language;
  std::string text;

  friend bool operator==(const Translation&, const Translation&) = default;
};

namespace detail {

inline bool is_blank(std::string_view s) noexcept {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

inline void check_line_text(std::string_view text, std::string_view what) {
  if (is_blank(text)) {
    throw Error(Errc::invalid_argument, "empty " + std::string(what));
  }
  if (text.find_first_of("\r\n") != std::string_view::npos) {
    throw Error(Errc::invalid_argument,
                std::string(what) + " contains a line break: '" +
                    std::string(text) + "'");
  }
}

inline std::string prompt_line(std::string_view label, std::string_view text) {
  std::string line;
  line.reserve(label.size() + 2 + text.size());
  line.append(label).append(": ").append(text);
  return line;
}

}  // namespace detail

/// Source caption plus its translations. Translation order is the
/// configuration order and defines language indices 0..n-1 for ranking.
class ParallelText {
 public:
  ParallelText(SourceText source, std::vector<Translation> translations)
      : source_(std::move(source)), translations_(std::move(translations)) {
    detail::check_line_text(source_.text, "source text");
    for (std::size_t i = 0; i < translations_.size(); ++i) {
      const auto& t = translations_[i];
      if (!is_valid_language_code(t.language.code)) {
        throw Error(Errc::invalid_argument,
                    "invalid language code '" + t.language.code + "'");
      }
      if (t.language.code == "en") {
        throw Error(Errc::invalid_argument,
                    "translations must not contain English; it is the source");
      }
      if (t.language.display_name.empty()) {
        throw Error(Errc::invalid_argument,
                    "empty display name for '" + t.language.code + "'");
      }
      detail::check_line_text(t.text, "translation for '" + t.language.code + "'");
      for (std::size_t j = 0; j < i; ++j) {
        if (translations_[j].language.code == t.language.code) {
          throw Error(Errc::invalid_argument,
                      "duplicate translation language '" + t.language.code + "'");
        }
      }
    }
  }

  const SourceText& source() const noexcept { return source_; }
  const std::vector<Translation>& translations() const noexcept { return translations_; }
  std::size_t size() const noexcept { return translations_.size(); }

  std::optional<std::size_t> index_of(std::string_view code) const noexcept {
    for (std::size_t i = 0; i < translations_.size(); ++i) {
      if (translations_[i].language.code == code) return i;
    }
    return std::nullopt;
  }

  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    out.reserve(translations_.size());
    for (const auto& t : translations_) out.push_back(t.language.code);
    return out;
  }

 private:
  SourceText source_;
  std::vector<Translation> translations_;
};

enum class AblationKind { pmt2i, english_only, single_language, reduplication, paraphrase };

constexpr std::string_view to_string(AblationKind kind) noexcept {
  switch (kind) {
    case AblationKind::pmt2i: return "pmt2i";
    case AblationKind::english_only: return "english_only";
    case AblationKind::single_language: return "single_language";
    case AblationKind::reduplication: return "reduplication";
    case AblationKind::paraphrase: return "paraphrase";
  }
  return "pmt2i";
}

inline AblationKind parse_ablation_kind(std::string_view text) {
  for (auto kind : {AblationKind::pmt2i, AblationKind::english_only,
                    AblationKind::single_language, AblationKind::reduplication,
                    AblationKind::paraphrase}) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(Errc::invalid_argument, "unknown ablation '" + std::string(text) +
                                          "' (expected pmt2i, english_only, "
                                          "single_language, reduplication or paraphrase)");
}

struct PromptVariant {
  std::vector<Language> language_order;
  std::string rendered;
  /// Index in the variant space; empty for baseline and ablation prompts.
  std::optional<std::uint64_t> rank;

  friend bool operator==(const PromptVariant&, const PromptVariant&) = default;
};

/// "English: <source>" followed by one "<Name>: <translation>" line per code
/// in `order`, joined by '\n' with no trailing newline.
inline std::string render_prompt(const ParallelText& parallel,
                                 std::span<const std::string> order) {
  std::vector<std::size_t> indices;
  indices.reserve(order.size());
  for (const auto& code : order) {
    auto index = parallel.index_of(code);
    if (!index) {
      throw Error(Errc::invalid_argument, "language '" + code +
                                              "' has no translation in sample '" +
                                              parallel.source().id + "'");
    }
    if (std::find(indices.begin(), indices.end(), *index) != indices.end()) {
      throw Error(Errc::invalid_argument, "duplicate language '" + code + "' in order");
    }
    indices.push_back(*index);
  }
  std::string out = detail::prompt_line(english().display_name, parallel.source().text);
  for (std::size_t index : indices) {
    const auto& t = parallel.translations()[index];
    out.push_back('\n');
    out += detail::prompt_line(t.language.display_name, t.text);
  }
  return out;
}

/// The source line followed by `n` copies of itself.
inline std::string render_reduplication(const SourceText& source, std::size_t n) {
  if (n == 0) {
    throw Error(Errc::invalid_argument, "reduplication needs at least one duplicate");
  }
  detail::check_line_text(source.text, "source text");
  const std::string line = detail::prompt_line(english().display_name, source.text);
  std::string out = line;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back('\n');
    out += line;
  }
  return out;
}

inline std::string render_paraphrase(const SourceText& source,
                                     std::span<const std::string> paraphrases) {
  detail::check_line_text(source.text, "source text");
  std::string out = detail::prompt_line(english().display_name, source.text);
  for (const auto& p : paraphrases) {
    detail::check_line_text(p, "paraphrase");
    out.push_back('\n');
    out += detail::prompt_line(english().display_name, p);
  }
  return out;
}

/// A prompt consisting of one translation only, no English line.
inline std::string render_single_language(const ParallelText& parallel,
                                          std::string_view code) {
  auto index = parallel.index_of(code);
  if (!index) {
    throw Error(Errc::invalid_argument, "language '" + std::string(code) +
                                            "' has no translation in sample '" +
                                            parallel.source().id + "'");
  }
  const auto& t = parallel.translations()[*index];
  return detail::prompt_line(t.language.display_name, t.text);
}

// ---------------------------------------------------------------------------
// Variant space: every nonempty ordered subset of n languages.

/// Largest language count whose variant count fits in 64 bits.
inline constexpr std::size_t kMaxVariantLanguages = 20;

/// Number of ordered selections of k out of n: n!/(n-k)!.
inline std::uint64_t arrangements(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  std::uint64_t out = 1;
  for (std::size_t i = 0; i < k; ++i) {
    const std::uint64_t factor = n - i;
    if (out > std::numeric_limits<std::uint64_t>::max() / factor) {
      throw Error(Errc::overflow, "arrangement count overflows 64 bits");
    }
    out *= factor;
  }
  return out;
}

/// Sum over i = 1..n of n!/(n-i)!. Zero for n = 0.
inline std::uint64_t count_variants(std::size_t n) {
  if (n > kMaxVariantLanguages) {
    throw Error(Errc::overflow, "variant space over " + std::to_string(n) +
                                    " languages exceeds the supported maximum of " +
                                    std::to_string(kMaxVariantLanguages));
  }
  std::uint64_t total = 0;
  for (std::size_t i = 1; i <= n; ++i) total += arrangements(n, i);
  return total;
}

/// Ranks are grouped by subset size (1..n ascending); within one size,
/// index sequences are ordered lexicographically.
inline std::vector<std::size_t> variant_unrank_indices(std::uint64_t rank, std::size_t n) {
  const std::uint64_t total = count_variants(n);
  if (rank >= total) {
    throw Error(Errc::out_of_range, "variant rank " + std::to_string(rank) +
                                        " out of range [0, " + std::to_string(total) + ")");
  }
  std::size_t size = 1;
  for (;; ++size) {
    const std::uint64_t block = arrangements(n, size);
    if (rank < block) break;
    rank -= block;
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out;
  out.reserve(size);
  for (std::size_t pos = 0; pos < size; ++pos) {
    const std::uint64_t block = arrangements(n - pos - 1, size - pos - 1);
    const auto digit = static_cast<std::size_t>(rank / block);
    rank %= block;
    out.push_back(pool[digit]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(digit));
  }
  return out;
}

inline std::uint64_t variant_rank_indices(std::span<const std::size_t> indices,
                                          std::size_t n) {
  const std::size_t size = indices.size();
  if (size == 0 || size > n) {
    throw Error(Errc::invalid_argument, "variant must select between 1 and " +
                                            std::to_string(n) + " languages");
  }
  (void)count_variants(n);
  std::uint64_t rank = 0;
  for (std::size_t i = 1; i < size; ++i) rank += arrangements(n, i);
  std::vector<bool> used(n, false);
  for (std::size_t pos = 0; pos < size; ++pos) {
    const std::size_t index = indices[pos];
    if (index >= n || used[index]) {
      throw Error(Errc::invalid_argument, "variant indices must be distinct and < n");
    }
    std::size_t digit = 0;
    for (std::size_t j = 0; j < index; ++j) {
      if (!used[j]) ++digit;
    }
    used[index] = true;
    rank += digit * arrangements(n - pos - 1, size - pos - 1);
  }
  return rank;
}

inline std::vector<std::string> variant_unrank(std::uint64_t rank,
                                               std::span<const std::string> languages) {
  std::vector<std::string> out;
  for (std::size_t index : variant_unrank_indices(rank, languages.size())) {
    out.push_back(languages[index]);
  }
  return out;
}

inline std::uint64_t variant_rank(std::span<const std::string> order,
                                  std::span<const std::string> languages) {
  std::vector<std::size_t> indices;
  indices.reserve(order.size());
  for (const auto& code : order) {
    auto it = std::find(languages.begin(), languages.end(), code);
    if (it == languages.end()) {
      throw Error(Errc::invalid_argument, "language '" + code + "' is not configured");
    }
    indices.push_back(static_cast<std::size_t>(it - languages.begin()));
  }
  return variant_rank_indices(indices, languages.size());
}

struct VariantStrategy {
  enum class Kind { all, first_k, sample };
  Kind kind = Kind::all;
  std::uint64_t k = 0;
  std::uint64_t seed = 0;

  static VariantStrategy all() { return {}; }
  static VariantStrategy first(std::uint64_t k) { return {Kind::first_k, k, 0}; }
  static VariantStrategy sample(std::uint64_t k, std::uint64_t seed) {
    return {Kind::sample, k, seed};
  }

  friend bool operator==(const VariantStrategy&, const VariantStrategy&) = default;
};

namespace detail {

inline std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw Error(Errc::invalid_argument,
                "invalid " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace detail

/// "all", "first:K" or "sample:K:SEED".
inline VariantStrategy parse_variant_strategy(std::string_view text) {
  if (text == "all") return VariantStrategy::all();
  if (text.starts_with("first:")) {
    const auto k = detail::parse_u64(text.substr(6), "variant count");
    if (k == 0) throw Error(Errc::invalid_argument, "first:K needs K >= 1");
    return VariantStrategy::first(k);
  }
  if (text.starts_with("sample:")) {
    const auto rest = text.substr(7);
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) {
      throw Error(Errc::invalid_argument, "expected sample:K:SEED, got '" +
                                              std::string(text) + "'");
    }
    const auto k = detail::parse_u64(rest.substr(0, colon), "variant count");
    const auto seed = detail::parse_u64(rest.substr(colon + 1), "seed");
    if (k == 0) throw Error(Errc::invalid_argument, "sample:K:SEED needs K >= 1");
    return VariantStrategy::sample(k, seed);
  }
  throw Error(Errc::invalid_argument, "unknown variant strategy '" + std::string(text) +
                                          "' (expected all, first:K or sample:K:SEED)");
}

inline std::string to_string(const VariantStrategy& s) {
  switch (s.kind) {
    case VariantStrategy::Kind::all: return "all";
    case VariantStrategy::Kind::first_k: return "first:" + std::to_string(s.k);
    case VariantStrategy::Kind::sample:
      return "sample:" + std::to_string(s.k) + ":" + std::to_string(s.seed);
  }
  return "all";
}

/// Ranks selected by a strategy over a space of `total` variants, ascending.
inline std::vector<std::uint64_t> select_variant_ranks(std::uint64_t total,
                                                       const VariantStrategy& strategy) {
  std::vector<std::uint64_t> ranks;
  switch (strategy.kind) {
    case VariantStrategy::Kind::all:
      ranks.resize(total);
      for (std::uint64_t r = 0; r < total; ++r) ranks[r] = r;
      break;
    case VariantStrategy::Kind::first_k: {
      if (strategy.k == 0) throw Error(Errc::invalid_argument, "first_k needs k >= 1");
      const auto k = std::min(strategy.k, total);
      ranks.resize(k);
      for (std::uint64_t r = 0; r < k; ++r) ranks[r] = r;
      break;
    }
    case VariantStrategy::Kind::sample:
      if (strategy.k == 0) throw Error(Errc::invalid_argument, "sample needs k >= 1");
      ranks = sample_distinct(total, strategy.k, strategy.seed);
      break;
  }
  return ranks;
}

inline PromptVariant make_variant(const ParallelText& parallel, std::uint64_t rank) {
  const auto codes = parallel.codes();
  PromptVariant variant;
  for (std::size_t index : variant_unrank_indices(rank, codes.size())) {
    variant.language_order.push_back(parallel.translations()[index].language);
  }
  std::vector<std::string> order;
  for (const auto& lang : variant.language_order) order.push_back(lang.code);
  variant.rendered = render_prompt(parallel, order);
  variant.rank = rank;
  return variant;
}

inline std::vector<PromptVariant> enumerate_variants(const ParallelText& parallel,
                                                     const VariantStrategy& strategy) {
  if (parallel.size() == 0) {
    if (strategy.kind == VariantStrategy::Kind::all) return {};
    throw Error(Errc::invalid_argument,
                "no translations available to build " + to_string(strategy) + " variants");
  }
  std::vector<PromptVariant> out;
  for (std::uint64_t rank : select_variant_ranks(count_variants(parallel.size()), strategy)) {
    out.push_back(make_variant(parallel, rank));
  }
  return out;
}

}  // namespace pmt2i
