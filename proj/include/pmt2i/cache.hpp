#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unistd.h>

#include "pmt2i/digest.hpp"
#include "pmt2i/error.hpp"

namespace pmt2i {

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes to a sibling temp file and renames over the target, so readers in
/// any process see either the old or the new content.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  static std::atomic<unsigned long> counter{0};
  std::ostringstream tmp_name;
  tmp_name << '.' << path.filename().string() << ".tmp-" << ::getpid() << '-'
           << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '-'
           << counter.fetch_add(1);
  const fs::path tmp = path.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(Errc::io, "short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(Errc::io, "cannot rename into '" + path.string() + "'");
  }
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CacheStats {
  std::size_t entries = 0;
  std::uintmax_t bytes = 0;
  std::map<std::string, std::size_t> per_operation;
};

/// Content-addressed response store: `<digest>.json` holds the response
/// body, `<digest>.meta.json` the operation, model id and creation time.
/// An empty directory path keeps entries in memory only.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(fs::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) {
      std::error_code ec;
      fs::create_directories(dir_, ec);
      if (ec) throw Error(Errc::io, "cannot create cache directory '" + dir_.string() + "'");
    }
  }

  const fs::path& directory() const noexcept { return dir_; }

  std::optional<json> get(const CacheKey& key) const {
    if (dir_.empty()) {
      std::lock_guard lock(mutex_);
      auto it = memory_.find(key.digest);
      if (it == memory_.end()) return std::nullopt;
      return std::optional<json>(std::in_place, it->second);
    }
    std::ifstream in(entry_path(key), std::ios::binary);
    if (!in) return std::nullopt;
    try {
      return std::optional<json>(std::in_place, json::parse(in));
    } catch (const json::exception&) {
      return std::nullopt;
    }
  }

  void put(const CacheKey& key, const json& value, std::string_view operation,
           std::string_view model_id) {
    if (dir_.empty()) {
      std::lock_guard lock(mutex_);
      memory_[key.digest] = value;
      return;
    }
    const json meta = {{"operation", operation},
                       {"model_id", model_id},
                       {"created_at", utc_timestamp()}};
    write_file_atomic(entry_path(key), value.dump());
    write_file_atomic(dir_ / (key.digest + ".meta.json"), meta.dump());
  }

  CacheStats stats() const {
    CacheStats out;
    if (dir_.empty()) {
      std::lock_guard lock(mutex_);
      out.entries = memory_.size();
      return out;
    }
    if (!fs::exists(dir_)) return out;
    for (const auto& entry : fs::directory_iterator(dir_)) {
      const auto name = entry.path().filename().string();
      if (!entry.is_regular_file() || name.starts_with('.')) continue;
      out.bytes += entry.file_size();
      if (!name.ends_with(".meta.json")) {
        if (name.ends_with(".json")) ++out.entries;
        continue;
      }
      try {
        const auto meta = json::parse(read_text_file(entry.path()));
        ++out.per_operation[meta.value("operation", std::string("unknown"))];
      } catch (const std::exception&) {
        ++out.per_operation["unknown"];
      }
    }
    return out;
  }

  /// Removes every entry; returns the number of responses removed.
  std::size_t clear() {
    if (dir_.empty()) {
      std::lock_guard lock(mutex_);
      const auto n = memory_.size();
      memory_.clear();
      return n;
    }
    std::size_t removed = 0;
    if (!fs::exists(dir_)) return 0;
    for (const auto& entry : fs::directory_iterator(dir_)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename().string();
      if (name.ends_with(".json") && !name.ends_with(".meta.json")) ++removed;
      fs::remove(entry.path());
    }
    return removed;
  }

 private:
  fs::path entry_path(const CacheKey& key) const { return dir_ / (key.digest + ".json"); }

  fs::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, json> memory_;
};

}  // namespace pmt2i
