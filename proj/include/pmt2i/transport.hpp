#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <string_view>

#include <httplib.h>

#include "pmt2i/digest.hpp"
#include "pmt2i/error.hpp"

namespace pmt2i {

/// One response of the JSON-over-HTTP protocol. `body` is null when the
/// payload was not JSON; `raw` then holds the text.
struct WireResponse {
  int status = 200;
  json body;
  std::string raw;
};

/// Carries a POST of a JSON body to a protocol route such as "/v1/embed/text".
/// Implementations must be safe to call from many threads at once.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual WireResponse post(std::string_view route, const json& body,
                            std::chrono::milliseconds timeout) = 0;
  /// Human-readable identity, recorded as backend_id.
  virtual std::string id() const = 0;
};

inline std::string error_message_from(const WireResponse& response) {
  if (response.body.is_object() && response.body.contains("error")) {
    const auto& err = response.body["error"];
    if (err.is_object()) return err.value("message", std::string());
  }
  return response.raw;
}

inline std::string error_code_from(const WireResponse& response) {
  if (response.body.is_object() && response.body.contains("error")) {
    const auto& err = response.body["error"];
    if (err.is_object() && err.contains("code") && err["code"].is_string()) {
      return err["code"].get<std::string>();
    }
  }
  return {};
}

class HttpTransport final : public Transport {
 public:
  /// `auth_token_ref` names an environment variable holding a bearer token.
  explicit HttpTransport(std::string base_url, std::string auth_token_ref = {})
      : base_url_(std::move(base_url)) {
    const auto scheme_end = base_url_.find("://");
    if (scheme_end == std::string::npos ||
        (!base_url_.starts_with("http://") && !base_url_.starts_with("https://"))) {
      throw Error(Errc::config, "unsupported backend URL '" + base_url_ + "'");
    }
    const auto path_start = base_url_.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      origin_ = base_url_;
    } else {
      origin_ = base_url_.substr(0, path_start);
      prefix_ = base_url_.substr(path_start);
      while (prefix_.ends_with('/')) prefix_.pop_back();
    }
    if (!auth_token_ref.empty()) {
      const char* token = std::getenv(auth_token_ref.c_str());
      if (token == nullptr || *token == '\0') {
        throw Error(Errc::config, "environment variable '" + auth_token_ref +
                                      "' (auth_token_ref) is not set");
      }
      token_ = token;
    }
  }

  WireResponse post(std::string_view route, const json& body,
                    std::chrono::milliseconds timeout) override {
    httplib::Client client(origin_);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto micros =
        std::chrono::duration_cast<std::chrono::microseconds>(timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    const std::string path = prefix_ + std::string(route);
    auto result = client.Post(path, headers, body.dump(), "application/json");
    if (!result) {
      const auto err = result.error();
      const std::string what = httplib::to_string(err);
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        throw Error(Errc::timeout, "POST " + base_url_ + path + ": " + what);
      }
      throw Error(Errc::network, "POST " + base_url_ + path + ": " + what);
    }
    WireResponse out;
    out.status = result->status;
    out.raw = result->body;
    out.body = json::parse(result->body, nullptr, false);
    if (out.body.is_discarded()) out.body = nullptr;
    return out;
  }

  std::string id() const override { return base_url_; }

 private:
  std::string base_url_;
  std::string origin_;
  std::string prefix_;
  std::string token_;
};

}  // namespace pmt2i
