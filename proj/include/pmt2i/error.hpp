#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace pmt2i {

enum class Errc {
  invalid_argument,
  out_of_range,
  overflow,
  config,
  parse,
  io,
  network,
  timeout,
  http,
  schema,
  empty_result,
  content_refused,
  invalid_image,
  dim_mismatch,
  zero_norm,
  no_valid_samples,
  digest_mismatch,
  corrupt_checkpoint,
  interrupted,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::out_of_range: return "out_of_range";
    case Errc::overflow: return "overflow";
    case Errc::config: return "config";
    case Errc::parse: return "parse";
    case Errc::io: return "io";
    case Errc::network: return "network";
    case Errc::timeout: return "timeout";
    case Errc::http: return "http";
    case Errc::schema: return "schema";
    case Errc::empty_result: return "empty_result";
    case Errc::content_refused: return "content_refused";
    case Errc::invalid_image: return "invalid_image";
    case Errc::dim_mismatch: return "dim_mismatch";
    case Errc::zero_norm: return "zero_norm";
    case Errc::no_valid_samples: return "no_valid_samples";
    case Errc::digest_mismatch: return "digest_mismatch";
    case Errc::corrupt_checkpoint: return "corrupt_checkpoint";
    case Errc::interrupted: return "interrupted";
  }
  return "unknown";
}

/// Backend-facing failures: everything a remote service or the wire can cause.
constexpr bool is_backend_error(Errc code) noexcept {
  switch (code) {
    case Errc::network:
    case Errc::timeout:
    case Errc::http:
    case Errc::schema:
    case Errc::empty_result:
    case Errc::content_refused:
    case Errc::dim_mismatch:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Error(Errc code, const std::string& message, int http_status,
        std::string remote_code)
      : std::runtime_error(message),
        code_(code),
        http_status_(http_status),
        remote_code_(std::move(remote_code)) {}

  Errc code() const noexcept { return code_; }
  /// 0 unless the error came from an HTTP response.
  int http_status() const noexcept { return http_status_; }
  /// The `error.code` string of a protocol error body, if any.
  const std::string& remote_code() const noexcept { return remote_code_; }

  /// Transient failures worth another attempt.
  bool retryable() const noexcept {
    if (code_ == Errc::network || code_ == Errc::timeout) return true;
    if (code_ == Errc::http) return http_status_ == 429 || http_status_ >= 500;
    return false;
  }

 private:
  Errc code_;
  int http_status_ = 0;
  std::string remote_code_;
};

}  // namespace pmt2i
