#pragma once

// Typed clients for the backend wire protocol. A BackendClient wraps one
// endpoint: it bounds in-flight requests, retries transient failures with
// exponential backoff, and serves repeated logical requests from a
// content-addressed cache (with in-process single-flight, so concurrent
// identical requests also reach upstream once).

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "pmt2i/cache.hpp"
#include "pmt2i/digest.hpp"
#include "pmt2i/error.hpp"
#include "pmt2i/image.hpp"
#include "pmt2i/language.hpp"
#include "pmt2i/mock.hpp"
#include "pmt2i/prompt.hpp"
#include "pmt2i/transport.hpp"

namespace pmt2i {

struct RetryPolicy {
  int max_attempts = 3;
  double base_backoff_s = 0.5;
  double factor = 2.0;

  std::chrono::duration<double> backoff_before(int attempt) const {
    // attempt is 1-based; no wait before the first try.
    if (attempt <= 1) return std::chrono::duration<double>(0);
    const double s = base_backoff_s * std::pow(factor, attempt - 2);
    return std::chrono::duration<double>(std::min(s, 60.0));
  }

  friend bool operator==(const RetryPolicy&, const RetryPolicy&) = default;
};

struct BackendEndpoint {
  std::string base_url;
  /// Identity used in cache keys; defaults to base_url when empty.
  std::string model_id;
  /// Name of the environment variable holding the bearer token.
  std::string auth_token_ref;
  double timeout_s = 60.0;
  int max_in_flight = 4;
  RetryPolicy retry;
  bool cache_generation = false;
  /// Expected embedding size; 0 accepts whatever the backend declares.
  std::size_t embedding_dim = 0;
  std::uint32_t max_image_side = 4096;

  std::string model_identity() const { return model_id.empty() ? base_url : model_id; }

  void validate() const {
    if (base_url.empty()) throw Error(Errc::config, "endpoint base_url is empty");
    if (!base_url.starts_with("mock://") && !base_url.starts_with("http://") &&
        !base_url.starts_with("https://")) {
      throw Error(Errc::config, "unsupported endpoint URL '" + base_url +
                                    "' (expected http://, https:// or mock://)");
    }
    if (max_in_flight < 1) throw Error(Errc::config, "max_in_flight must be >= 1");
    if (retry.max_attempts < 1) throw Error(Errc::config, "retry.max_attempts must be >= 1");
    if (!(timeout_s > 0)) throw Error(Errc::config, "timeout must be > 0");
    if (retry.base_backoff_s < 0 || retry.factor < 1) {
      throw Error(Errc::config, "retry backoff must be >= 0 with factor >= 1");
    }
    if (max_image_side < 1) throw Error(Errc::config, "max_image_side must be >= 1");
  }

  friend bool operator==(const BackendEndpoint&, const BackendEndpoint&) = default;
};

namespace detail {

inline void reject_unknown_keys(const json& object, std::initializer_list<std::string_view> known,
                                std::string_view where) {
  if (!object.is_object()) {
    throw Error(Errc::config, std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, value] : object.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw Error(Errc::config, "unknown key '" + key + "' in " + std::string(where));
  }
}

}  // namespace detail

inline json to_json(const BackendEndpoint& e) {
  json j = {{"base_url", e.base_url},
            {"timeout_s", e.timeout_s},
            {"max_in_flight", e.max_in_flight},
            {"retry",
             {{"max_attempts", e.retry.max_attempts},
              {"base_backoff_s", e.retry.base_backoff_s},
              {"factor", e.retry.factor}}},
            {"cache_generation", e.cache_generation},
            {"max_image_side", e.max_image_side}};
  if (!e.model_id.empty()) j["model_id"] = e.model_id;
  if (!e.auth_token_ref.empty()) j["auth_token_ref"] = e.auth_token_ref;
  if (e.embedding_dim != 0) j["embedding_dim"] = e.embedding_dim;
  return j;
}

inline BackendEndpoint endpoint_from_json(const json& j, std::string_view where = "endpoint") {
  if (j.is_string()) {
    BackendEndpoint e;
    e.base_url = j.get<std::string>();
    e.validate();
    return e;
  }
  detail::reject_unknown_keys(j,
                              {"base_url", "model_id", "auth_token_ref", "timeout_s",
                               "max_in_flight", "retry", "cache_generation", "embedding_dim",
                               "max_image_side"},
                              where);
  try {
    BackendEndpoint e;
    e.base_url = j.at("base_url").get<std::string>();
    e.model_id = j.value("model_id", std::string());
    e.auth_token_ref = j.value("auth_token_ref", std::string());
    e.timeout_s = j.value("timeout_s", e.timeout_s);
    e.max_in_flight = j.value("max_in_flight", e.max_in_flight);
    e.cache_generation = j.value("cache_generation", false);
    e.embedding_dim = j.value("embedding_dim", std::size_t{0});
    e.max_image_side = j.value("max_image_side", e.max_image_side);
    if (j.contains("retry")) {
      const auto& r = j["retry"];
      detail::reject_unknown_keys(r, {"max_attempts", "base_backoff_s", "factor"},
                                  std::string(where) + ".retry");
      e.retry.max_attempts = r.value("max_attempts", e.retry.max_attempts);
      e.retry.base_backoff_s = r.value("base_backoff_s", e.retry.base_backoff_s);
      e.retry.factor = r.value("factor", e.retry.factor);
    }
    e.validate();
    return e;
  } catch (const json::exception& ex) {
    throw Error(Errc::config, std::string(where) + ": " + ex.what());
  }
}

struct Embedding {
  std::vector<double> values;
  std::string model_id;

  std::size_t dim() const noexcept { return values.size(); }

  friend bool operator==(const Embedding&, const Embedding&) = default;
};

struct GeneratedImage {
  std::vector<std::uint8_t> png_bytes;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::int64_t seed = 0;
  std::string backend_id;

  /// Validates the PNG header and takes dimensions from it.
  static GeneratedImage from_png(std::vector<std::uint8_t> bytes, std::int64_t seed = 0,
                                 std::string backend_id = {}) {
    const auto header = read_png_header(bytes);
    return {std::move(bytes), header.width, header.height, seed, std::move(backend_id)};
  }

  friend bool operator==(const GeneratedImage&, const GeneratedImage&) = default;
};

struct ImageParams {
  std::uint32_t width = 256;
  std::uint32_t height = 256;

  friend bool operator==(const ImageParams&, const ImageParams&) = default;
};

enum class Verdict { correct, incorrect };

enum class ScoreKind { judge, reward, vqa };

struct RewardScore {
  double score = 0;
};

struct VqaProbability {
  double probability = 0;
};

using ScoreResult = std::variant<Verdict, RewardScore, VqaProbability>;

class BackendClient {
 public:
  BackendClient(BackendEndpoint endpoint, std::shared_ptr<Transport> transport,
                std::shared_ptr<ResponseCache> cache = std::make_shared<ResponseCache>())
      : endpoint_(std::move(endpoint)),
        transport_(std::move(transport)),
        cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
        slots_(endpoint_.max_in_flight) {
    endpoint_.validate();
    if (!transport_) throw Error(Errc::config, "backend client needs a transport");
  }

  BackendClient(const BackendClient&) = delete;
  BackendClient& operator=(const BackendClient&) = delete;

  const BackendEndpoint& endpoint() const noexcept { return endpoint_; }
  std::string backend_id() const { return transport_->id(); }
  /// Requests actually sent to the transport, retries included.
  std::size_t upstream_requests() const noexcept { return upstream_.load(); }

  std::string translate(std::string_view text, std::string_view source_lang,
                        std::string_view target_lang) {
    if (!is_valid_language_code(source_lang) || !is_valid_language_code(target_lang)) {
      throw Error(Errc::invalid_argument, "invalid language code in translate request");
    }
    if (source_lang == target_lang) {
      throw Error(Errc::invalid_argument, "invalid-language-pair: source and target are both '" +
                                              std::string(source_lang) + "'");
    }
    require_nonempty(text, "translate text");
    const json payload = {{"text", text}, {"source_lang", source_lang}, {"target_lang", target_lang}};
    const json body = call("translate", kRouteTranslate, payload, true, {}, [](const json& b) {
      require_field(b, "text", &json::is_string);
      if (b["text"].get<std::string>().empty()) {
        throw Error(Errc::empty_result, "backend returned an empty translation");
      }
    });
    return body["text"].get<std::string>();
  }

  std::vector<std::string> paraphrase(std::string_view text, std::size_t n) {
    if (n == 0) throw Error(Errc::invalid_argument, "paraphrase count must be >= 1");
    require_nonempty(text, "paraphrase text");
    const json payload = {{"text", text}, {"n", n}};
    const json body = call("paraphrase", kRouteParaphrase, payload, true, {}, [n](const json& b) {
      require_field(b, "texts", &json::is_array);
      const auto& texts = b["texts"];
      if (texts.size() < n) {
        throw Error(Errc::empty_result, "backend returned " + std::to_string(texts.size()) +
                                            " paraphrases, expected " + std::to_string(n));
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!texts[i].is_string() || texts[i].get<std::string>().empty()) {
          throw Error(Errc::empty_result, "backend returned an empty paraphrase");
        }
      }
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(body["texts"][i].get<std::string>());
    return out;
  }

  GeneratedImage generate_image(std::string_view prompt, std::int64_t seed,
                                const ImageParams& params) {
    require_nonempty(prompt, "prompt");
    if (params.width < 1 || params.height < 1 || params.width > endpoint_.max_image_side ||
        params.height > endpoint_.max_image_side) {
      throw Error(Errc::invalid_argument,
                  "image size " + std::to_string(params.width) + "x" +
                      std::to_string(params.height) + " outside backend bounds [1, " +
                      std::to_string(endpoint_.max_image_side) + "]");
    }
    const json payload = {{"prompt", prompt},
                          {"seed", seed},
                          {"width", params.width},
                          {"height", params.height}};
    const json body = call("generate", kRouteGenerate, payload, endpoint_.cache_generation, {},
                           [](const json& b) {
                             require_field(b, "image_b64", &json::is_string);
                             require_field(b, "width", &json::is_number_integer);
                             require_field(b, "height", &json::is_number_integer);
                           });
    std::vector<std::uint8_t> png;
    PngHeader header;
    try {
      png = base64_decode(body["image_b64"].get<std::string>());
      header = read_png_header(png);
    } catch (const Error& e) {
      throw Error(Errc::schema, std::string("invalid image payload: ") + e.what());
    }
    if (header.width != body["width"].get<std::uint32_t>() ||
        header.height != body["height"].get<std::uint32_t>()) {
      throw Error(Errc::schema, "image dimensions disagree with the PNG header");
    }
    return {std::move(png), header.width, header.height, seed, transport_->id()};
  }

  Embedding embed_text(std::string_view text) {
    require_nonempty(text, "embedding text");
    return parse_embedding(
        call("embed_text", kRouteEmbedText, {{"text", text}}, true, {}, embedding_validator()));
  }

  Embedding embed_image(const GeneratedImage& image) {
    (void)read_png_header(image.png_bytes);
    const std::string digest = sha256_hex(image.png_bytes);
    const json payload = {{"image_b64", base64_encode(image.png_bytes)}};
    const json key = {{"image_sha256", digest}};
    return parse_embedding(
        call("embed_image", kRouteEmbedImage, payload, true, key, embedding_validator()));
  }

  Verdict judge(std::string_view prompt, const GeneratedImage& image,
                const std::optional<std::string>& template_id = std::nullopt) {
    require_nonempty(prompt, "judge prompt");
    (void)read_png_header(image.png_bytes);
    json payload = {{"prompt", prompt}, {"image_b64", base64_encode(image.png_bytes)}};
    json key = {{"prompt", prompt}, {"image_sha256", sha256_hex(image.png_bytes)}};
    if (template_id) {
      payload["template_id"] = *template_id;
      key["template_id"] = *template_id;
    }
    const json body = call("judge", kRouteJudge, payload, true, key, [](const json& b) {
      require_field(b, "verdict", &json::is_string);
      const auto v = b["verdict"].get<std::string>();
      if (v != "correct" && v != "incorrect") {
        throw Error(Errc::schema, "unparseable verdict '" + v + "'");
      }
    });
    return body["verdict"].get<std::string>() == "correct" ? Verdict::correct : Verdict::incorrect;
  }

  double reward(std::string_view prompt, const GeneratedImage& image) {
    require_nonempty(prompt, "reward prompt");
    (void)read_png_header(image.png_bytes);
    const json payload = {{"prompt", prompt}, {"image_b64", base64_encode(image.png_bytes)}};
    const json key = {{"prompt", prompt}, {"image_sha256", sha256_hex(image.png_bytes)}};
    const json body = call("reward", kRouteReward, payload, true, key, [](const json& b) {
      require_field(b, "score", &json::is_number);
      if (!std::isfinite(b["score"].get<double>())) {
        throw Error(Errc::schema, "reward score is not finite");
      }
    });
    return body["score"].get<double>();
  }

  double vqa(std::string_view question, const GeneratedImage& image) {
    require_nonempty(question, "VQA question");
    (void)read_png_header(image.png_bytes);
    const json payload = {{"question", question}, {"image_b64", base64_encode(image.png_bytes)}};
    const json key = {{"question", question}, {"image_sha256", sha256_hex(image.png_bytes)}};
    const json body = call("vqa", kRouteVqa, payload, true, key, [](const json& b) {
      require_field(b, "probability", &json::is_number);
      const double p = b["probability"].get<double>();
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(Errc::schema, "VQA probability " + b["probability"].dump() +
                                      " out of range [0, 1]");
      }
    });
    return body["probability"].get<double>();
  }

  ScoreResult score_image(ScoreKind kind, std::string_view prompt_or_question,
                          const GeneratedImage& image,
                          const std::optional<std::string>& template_id = std::nullopt) {
    switch (kind) {
      case ScoreKind::judge: return judge(prompt_or_question, image, template_id);
      case ScoreKind::reward: return RewardScore{reward(prompt_or_question, image)};
      case ScoreKind::vqa: return VqaProbability{vqa(prompt_or_question, image)};
    }
    throw Error(Errc::invalid_argument, "unknown score kind");
  }

 private:
  using Validator = std::function<void(const json&)>;

  static void require_nonempty(std::string_view text, std::string_view what) {
    if (detail::is_blank(text)) throw Error(Errc::invalid_argument, "empty " + std::string(what));
  }

  static void require_field(const json& body, const char* field, bool (json::*is)() const noexcept) {
    if (!body.is_object() || !body.contains(field) || !(body[field].*is)()) {
      throw Error(Errc::schema, std::string("response field '") + field + "' missing or mistyped");
    }
  }

  Validator embedding_validator() const {
    return [expected = endpoint_.embedding_dim](const json& b) {
      require_field(b, "embedding", &json::is_array);
      require_field(b, "dim", &json::is_number_integer);
      const auto dim = b["dim"].get<std::int64_t>();
      if (dim < 1) throw Error(Errc::schema, "embedding dim must be positive");
      if (b["embedding"].size() != static_cast<std::size_t>(dim)) {
        throw Error(Errc::dim_mismatch, "embedding has " + std::to_string(b["embedding"].size()) +
                                            " values but declares dim " + std::to_string(dim));
      }
      if (expected != 0 && static_cast<std::size_t>(dim) != expected) {
        throw Error(Errc::dim_mismatch, "embedding dim " + std::to_string(dim) +
                                            " differs from configured " + std::to_string(expected));
      }
      for (const auto& v : b["embedding"]) {
        if (!v.is_number() || !std::isfinite(v.get<double>())) {
          throw Error(Errc::schema, "embedding contains a non-finite value");
        }
      }
    };
  }

  static Embedding parse_embedding(const json& body) {
    Embedding e;
    e.values = body["embedding"].get<std::vector<double>>();
    e.model_id = body.value("model_id", std::string());
    return e;
  }

  json call(std::string_view op, std::string_view route, const json& payload, bool cacheable,
            const json& key_payload, const Validator& validate) {
    if (!cacheable) return send(route, payload, validate);
    const CacheKey key =
        make_cache_key(op, key_payload.is_null() ? payload : key_payload, endpoint_.model_identity());
    if (auto hit = cache_->get(key)) return *hit;

    std::promise<json> promise;
    std::shared_future<json> shared;
    bool leader = false;
    {
      std::lock_guard lock(flight_mutex_);
      auto it = in_flight_.find(key.digest);
      if (it == in_flight_.end()) {
        shared = promise.get_future().share();
        in_flight_.emplace(key.digest, shared);
        leader = true;
      } else {
        shared = it->second;
      }
    }
    if (!leader) return shared.get();

    try {
      // Another process may have filled the entry while we waited on nothing.
      json body;
      if (auto hit = cache_->get(key)) {
        body = *hit;
      } else {
        body = send(route, payload, validate);
        cache_->put(key, body, op, endpoint_.model_identity());
      }
      promise.set_value(body);
      finish_flight(key.digest);
      return body;
    } catch (...) {
      promise.set_exception(std::current_exception());
      finish_flight(key.digest);
      throw;
    }
  }

  void finish_flight(const std::string& digest) {
    std::lock_guard lock(flight_mutex_);
    in_flight_.erase(digest);
  }

  json send(std::string_view route, const json& payload, const Validator& validate) {
    const auto timeout = std::chrono::milliseconds(
        static_cast<std::int64_t>(std::ceil(endpoint_.timeout_s * 1000.0)));
    for (int attempt = 1;; ++attempt) {
      std::this_thread::sleep_for(endpoint_.retry.backoff_before(attempt));
      try {
        WireResponse response;
        {
          SlotGuard slot(slots_);
          ++upstream_;
          response = transport_->post(route, payload, timeout);
        }
        check_status(route, response);
        if (!response.body.is_object()) {
          throw Error(Errc::schema, "response from " + std::string(route) + " is not a JSON object");
        }
        validate(response.body);
        return response.body;
      } catch (const Error& e) {
        if (!e.retryable() || attempt >= endpoint_.retry.max_attempts) {
          if (e.retryable()) {
            throw Error(e.code(),
                        "all " + std::to_string(attempt) + " attempts failed: " + e.what(),
                        e.http_status(), e.remote_code());
          }
          throw;
        }
      }
    }
  }

  void check_status(std::string_view route, const WireResponse& response) const {
    if (response.status >= 200 && response.status < 300) return;
    const std::string code = error_code_from(response);
    const std::string message = "POST " + std::string(route) + " on " + transport_->id() +
                                " returned HTTP " + std::to_string(response.status) +
                                (code.empty() ? "" : " [" + code + "]") + ": " +
                                error_message_from(response);
    if (code == "content_refused") {
      throw Error(Errc::content_refused, message, response.status, code);
    }
    throw Error(Errc::http, message, response.status, code);
  }

  class SlotGuard {
   public:
    explicit SlotGuard(std::counting_semaphore<>& sem) : sem_(sem) { sem_.acquire(); }
    ~SlotGuard() { sem_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

   private:
    std::counting_semaphore<>& sem_;
  };

  BackendEndpoint endpoint_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  std::counting_semaphore<> slots_;
  std::atomic<std::size_t> upstream_{0};
  std::mutex flight_mutex_;
  std::map<std::string, std::shared_future<json>> in_flight_;
};

inline std::shared_ptr<Transport> make_transport(const BackendEndpoint& endpoint) {
  endpoint.validate();
  if (endpoint.base_url.starts_with("mock://")) {
    std::string name = endpoint.base_url.substr(7);
    if (name.empty()) name = "default";
    return MockRegistry::instance().get(name);
  }
  return std::make_shared<HttpTransport>(endpoint.base_url, endpoint.auth_token_ref);
}

// ---------------------------------------------------------------------------
// Capability routing.

inline const std::set<std::string>& known_capabilities() {
  static const std::set<std::string> caps{"translate", "paraphrase", "generate",
                                          "embed",     "embed_clip_i", "embed_dino",
                                          "judge",     "reward",       "vqa"};
  return caps;
}

inline void validate_capability_name(const std::string& name) {
  if (known_capabilities().count(name)) return;
  if (name.starts_with("translate.") && is_valid_language_code(name.substr(10))) return;
  throw Error(Errc::config, "unknown endpoint capability '" + name + "'");
}

/// Capability name -> endpoint. "translate.<code>" overrides "translate" for
/// one target language.
using RoutingTable = std::map<std::string, BackendEndpoint>;

inline json to_json(const RoutingTable& table) {
  json j = json::object();
  for (const auto& [name, endpoint] : table) j[name] = to_json(endpoint);
  return j;
}

inline RoutingTable routing_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::config, "endpoints must be a JSON object");
  RoutingTable table;
  for (const auto& [name, value] : j.items()) {
    validate_capability_name(name);
    table[name] = endpoint_from_json(value, "endpoints." + name);
  }
  return table;
}

/// The set of clients a run uses, one per routed capability.
class Backends {
 public:
  Backends() = default;

  /// Builds clients for every route; endpoints with identical configuration
  /// share one client and therefore one in-flight limit.
  static Backends from_routing(const RoutingTable& table, std::shared_ptr<ResponseCache> cache) {
    Backends out;
    std::vector<std::pair<BackendEndpoint, std::shared_ptr<BackendClient>>> built;
    for (const auto& [name, endpoint] : table) {
      validate_capability_name(name);
      std::shared_ptr<BackendClient> client;
      for (const auto& [e, c] : built) {
        if (e == endpoint) client = c;
      }
      if (!client) {
        client = std::make_shared<BackendClient>(endpoint, make_transport(endpoint), cache);
        built.emplace_back(endpoint, client);
      }
      out.clients_[name] = client;
    }
    return out;
  }

  void set(const std::string& capability, std::shared_ptr<BackendClient> client) {
    validate_capability_name(capability);
    clients_[capability] = std::move(client);
  }

  bool has(const std::string& capability) const { return clients_.count(capability) != 0; }

  BackendClient& get(const std::string& capability) const {
    auto it = clients_.find(capability);
    if (it == clients_.end()) {
      throw Error(Errc::config, "no endpoint configured for '" + capability + "'");
    }
    return *it->second;
  }

  bool can_translate_to(std::string_view code) const {
    return has("translate." + std::string(code)) || has("translate");
  }

  BackendClient& translator_for(std::string_view code) const {
    const std::string specific = "translate." + std::string(code);
    if (has(specific)) return get(specific);
    if (has("translate")) return get("translate");
    throw Error(Errc::config, "no translate endpoint routes language '" + std::string(code) + "'");
  }

 private:
  std::map<std::string, std::shared_ptr<BackendClient>> clients_;
};

}  // namespace pmt2i
