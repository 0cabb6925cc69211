#pragma once

// Prompt datasets: JSONL (canonical) with optional reference image,
// VQA questions and pre-supplied translations per record, or CSV for plain
// prompt lists.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pmt2i/cache.hpp"
#include "pmt2i/digest.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/language.hpp"
#include "pmt2i/prompt.hpp"
#include "pmt2i/random.hpp"

namespace pmt2i {

struct DatasetRecord {
  std::string id;
  std::string text;
  /// As written in the file; relative paths resolve against the dataset's directory.
  std::optional<std::string> reference_image;
  std::vector<std::string> questions;
  std::map<std::string, std::string> translations;

  SourceText source() const { return {id, text}; }

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

enum class DatasetFormat { automatic, jsonl, csv };

inline std::string line_error(std::size_t line, std::string_view message) {
  return "line " + std::to_string(line) + ": " + std::string(message);
}

namespace detail {

inline DatasetRecord record_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw Error(Errc::parse, line_error(line, "expected a JSON object"));
  DatasetRecord r;
  if (!j.contains("id")) throw Error(Errc::parse, line_error(line, "missing 'id'"));
  if (j["id"].is_string()) {
    r.id = j["id"].get<std::string>();
  } else if (j["id"].is_number_integer()) {
    r.id = std::to_string(j["id"].get<std::int64_t>());
  } else {
    throw Error(Errc::parse, line_error(line, "'id' must be a string or integer"));
  }
  if (r.id.empty()) throw Error(Errc::parse, line_error(line, "empty 'id'"));
  if (!j.contains("text") || !j["text"].is_string()) {
    throw Error(Errc::parse, line_error(line, "missing string 'text'"));
  }
  r.text = j["text"].get<std::string>();
  if (is_blank(r.text)) throw Error(Errc::parse, line_error(line, "empty 'text'"));
  if (j.contains("reference_image") && !j["reference_image"].is_null()) {
    if (!j["reference_image"].is_string() || j["reference_image"].get<std::string>().empty()) {
      throw Error(Errc::parse, line_error(line, "'reference_image' must be a nonempty string"));
    }
    r.reference_image = j["reference_image"].get<std::string>();
  }
  if (j.contains("questions") && !j["questions"].is_null()) {
    if (!j["questions"].is_array()) {
      throw Error(Errc::parse, line_error(line, "'questions' must be an array"));
    }
    for (const auto& q : j["questions"]) {
      if (!q.is_string() || is_blank(q.get<std::string>())) {
        throw Error(Errc::parse, line_error(line, "questions must be nonempty strings"));
      }
      r.questions.push_back(q.get<std::string>());
    }
  }
  if (j.contains("translations") && !j["translations"].is_null()) {
    if (!j["translations"].is_object()) {
      throw Error(Errc::parse, line_error(line, "'translations' must be an object"));
    }
    for (const auto& [code, text] : j["translations"].items()) {
      if (!is_valid_language_code(code) || code == "en") {
        throw Error(Errc::parse, line_error(line, "invalid translation language '" + code + "'"));
      }
      if (!text.is_string() || is_blank(text.get<std::string>())) {
        throw Error(Errc::parse, line_error(line, "empty translation for '" + code + "'"));
      }
      r.translations[code] = text.get<std::string>();
    }
  }
  return r;
}

/// RFC 4180 rows with the 1-based line each row starts on.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::string_view text) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> row;
  std::string field;
  std::size_t line = 1;
  std::size_t row_line = 1;
  bool quoted = false;
  bool field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.emplace_back(row_line, std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_row();
      ++line;
      row_line = line;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw Error(Errc::parse, line_error(row_line, "unterminated quoted field"));
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

inline std::vector<std::pair<std::size_t, DatasetRecord>> load_csv(std::string_view text) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw Error(Errc::parse, "CSV file has no header row");
  const auto& header = rows.front().second;
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  if (!column.count("id") || !column.count("text")) {
    throw Error(Errc::parse, line_error(rows.front().first, "CSV header needs 'id' and 'text' columns"));
  }
  std::vector<std::pair<std::size_t, DatasetRecord>> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& [line, cells] = rows[r];
    if (cells.size() != header.size()) {
      throw Error(Errc::parse, line_error(line, "expected " + std::to_string(header.size()) +
                                                    " fields, found " + std::to_string(cells.size())));
    }
    DatasetRecord rec;
    rec.id = cells[column["id"]];
    rec.text = cells[column["text"]];
    if (rec.id.empty()) throw Error(Errc::parse, line_error(line, "empty 'id'"));
    if (is_blank(rec.text)) throw Error(Errc::parse, line_error(line, "empty 'text'"));
    if (auto it = column.find("reference_image"); it != column.end() && !cells[it->second].empty()) {
      rec.reference_image = cells[it->second];
    }
    out.emplace_back(line, std::move(rec));
  }
  return out;
}

}  // namespace detail

inline std::vector<DatasetRecord> parse_prompts(std::string_view content, DatasetFormat format) {
  std::vector<std::pair<std::size_t, DatasetRecord>> numbered;
  if (format == DatasetFormat::csv) {
    numbered = detail::load_csv(content);
  } else {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
      auto end = content.find('\n', start);
      if (end == std::string_view::npos) end = content.size();
      std::string_view line = content.substr(start, end - start);
      ++line_no;
      start = end + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (detail::is_blank(line)) {
        if (end == content.size()) break;
        continue;
      }
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(Errc::parse, line_error(line_no, "malformed JSON"));
      numbered.emplace_back(line_no, detail::record_from_json(j, line_no));
      if (end == content.size()) break;
    }
  }
  std::map<std::string, std::size_t> first_line;
  std::vector<DatasetRecord> out;
  out.reserve(numbered.size());
  for (auto& [line, record] : numbered) {
    auto [it, inserted] = first_line.emplace(record.id, line);
    if (!inserted) {
      throw Error(Errc::parse, "duplicate id '" + record.id + "' at lines " +
                                   std::to_string(it->second) + " and " + std::to_string(line));
    }
    out.push_back(std::move(record));
  }
  return out;
}

inline DatasetFormat detect_format(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? DatasetFormat::csv : DatasetFormat::jsonl;
}

inline std::vector<DatasetRecord> load_prompts(const std::filesystem::path& path,
                                               DatasetFormat format = DatasetFormat::automatic) {
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::io, "dataset '" + path.string() + "' does not exist");
  }
  if (format == DatasetFormat::automatic) format = detect_format(path);
  try {
    return parse_prompts(read_text_file(path), format);
  } catch (const Error& e) {
    if (e.code() != Errc::parse) throw;
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
}

inline json to_json(const DatasetRecord& r) {
  json j = {{"id", r.id}, {"text", r.text}};
  if (r.reference_image) j["reference_image"] = *r.reference_image;
  if (!r.questions.empty()) j["questions"] = r.questions;
  if (!r.translations.empty()) j["translations"] = r.translations;
  return j;
}

inline std::string to_jsonl(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

inline std::filesystem::path resolve_reference(const std::filesystem::path& dataset_path,
                                               const std::string& reference) {
  std::filesystem::path ref(reference);
  if (ref.is_absolute()) return ref;
  return dataset_path.parent_path() / ref;
}

/// n records drawn uniformly without replacement, in original order.
inline std::vector<DatasetRecord> sample(const std::vector<DatasetRecord>& records, std::size_t n,
                                         std::uint64_t seed) {
  if (n < 1 || n > records.size()) {
    throw Error(Errc::out_of_range, "sample size " + std::to_string(n) + " outside [1, " +
                                        std::to_string(records.size()) + "]");
  }
  std::vector<DatasetRecord> out;
  out.reserve(n);
  for (auto index : sample_distinct(records.size(), n, seed)) out.push_back(records[index]);
  return out;
}

}  // namespace pmt2i
