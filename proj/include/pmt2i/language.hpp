#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pmt2i/error.hpp"

namespace pmt2i {

/// A language as it appears in a prompt: ISO-639-1 code plus the English
/// exonym used as the line label ("de" -> "German").
struct Language {
  std::string code;
  std::string display_name;

  friend bool operator==(const Language&, const Language&) = default;
};

inline bool is_valid_language_code(std::string_view code) noexcept {
  return code.size() == 2 &&
         std::all_of(code.begin(), code.end(),
                     [](char c) { return c >= 'a' && c <= 'z'; });
}

namespace detail {

struct KnownLanguage {
  std::string_view code;
  std::string_view name;
};

inline constexpr std::array<KnownLanguage, 24> kKnownLanguages{{
    {"ar", "Arabic"},     {"cs", "Czech"},     {"da", "Danish"},
    {"de", "German"},     {"el", "Greek"},     {"en", "English"},
    {"es", "Spanish"},    {"fi", "Finnish"},   {"fr", "French"},
    {"he", "Hebrew"},     {"hi", "Hindi"},     {"hu", "Hungarian"},
    {"id", "Indonesian"}, {"it", "Italian"},   {"ja", "Japanese"},
    {"ko", "Korean"},     {"nl", "Dutch"},     {"pl", "Polish"},
    {"pt", "Portuguese"}, {"ru", "Russian"},   {"sv", "Swedish"},
    {"tr", "Turkish"},    {"uk", "Ukrainian"}, {"zh", "Chinese"},
}};

}  // namespace detail

inline Language english() { return {"en", "English"}; }

/// Looks up the built-in exonym table, then `extra_names` (which wins).
inline Language language_from_code(
    std::string_view code,
    const std::map<std::string, std::string>& extra_names = {}) {
  if (!is_valid_language_code(code)) {
    throw Error(Errc::invalid_argument,
                "invalid language code '" + std::string(code) +
                    "' (expected two lowercase letters)");
  }
  if (auto it = extra_names.find(std::string(code)); it != extra_names.end()) {
    if (it->second.empty()) {
      throw Error(Errc::invalid_argument,
                  "empty display name for language '" + it->first + "'");
    }
    return {it->first, it->second};
  }
  for (const auto& known : detail::kKnownLanguages) {
    if (known.code == code) return {std::string(known.code), std::string(known.name)};
  }
  throw Error(Errc::invalid_argument,
              "unknown language '" + std::string(code) +
                  "' (add a display name under language_names)");
}

/// Russian, Spanish, German, French, Chinese, Italian.
inline std::vector<Language> default_languages() {
  std::vector<Language> out;
  for (std::string_view code : {"ru", "es", "de", "fr", "zh", "it"}) {
    out.push_back(language_from_code(code));
  }
  return out;
}

inline std::vector<Language> languages_from_codes(
    const std::vector<std::string>& codes,
    const std::map<std::string, std::string>& extra_names = {}) {
  std::vector<Language> out;
  out.reserve(codes.size());
  for (const auto& code : codes) {
    Language lang = language_from_code(code, extra_names);
    for (const auto& seen : out) {
      if (seen.code == lang.code) {
        throw Error(Errc::invalid_argument, "duplicate language '" + code + "'");
      }
      if (seen.display_name == lang.display_name) {
        throw Error(Errc::invalid_argument,
                    "display name '" + lang.display_name + "' used twice");
      }
    }
    out.push_back(std::move(lang));
  }
  return out;
}

}  // namespace pmt2i
