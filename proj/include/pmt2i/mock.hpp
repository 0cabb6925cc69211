#pragma once

// Deterministic in-process implementation of the wire protocol. Every
// response is a pure function of the canonicalized request, so the mock can
// stand in for real backends in tests and offline runs.
//
// Contracts:
//   translate   "«<target>» " + text
//   paraphrase  text + " ¶<i>" for i = 1..n
//   generate    RGB noise seeded by the request digest; prompts containing
//               "XREFUSE" are refused with 422 content_refused
//   embed/*     hash-expanded vectors in [-1, 1] of the configured dim
//   judge       "incorrect" iff the prompt contains "XFAIL"
//   reward      hash-derived score in [-1, 1]
//   vqa         hash-derived probability in [0, 1]

#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pmt2i/digest.hpp"
#include "pmt2i/image.hpp"
#include "pmt2i/random.hpp"
#include "pmt2i/transport.hpp"

namespace pmt2i {

inline constexpr std::string_view kRouteTranslate = "/v1/translate";
inline constexpr std::string_view kRouteParaphrase = "/v1/paraphrase";
inline constexpr std::string_view kRouteGenerate = "/v1/generate";
inline constexpr std::string_view kRouteEmbedText = "/v1/embed/text";
inline constexpr std::string_view kRouteEmbedImage = "/v1/embed/image";
inline constexpr std::string_view kRouteJudge = "/v1/judge";
inline constexpr std::string_view kRouteReward = "/v1/reward";
inline constexpr std::string_view kRouteVqa = "/v1/vqa";

inline WireResponse protocol_error(int status, std::string_view code, std::string_view message) {
  WireResponse r;
  r.status = status;
  r.body = {{"error", {{"code", code}, {"message", message}}}};
  r.raw = r.body.dump();
  return r;
}

inline WireResponse protocol_ok(json body) {
  WireResponse r;
  r.body = std::move(body);
  r.raw = r.body.dump();
  return r;
}

/// `dim` values in [-1, 1] expanded from SHA-256 of `seed` in counter mode.
inline std::vector<double> hash_vector(std::string_view seed, std::size_t dim) {
  std::vector<double> out;
  out.reserve(dim);
  for (std::uint32_t block = 0; out.size() < dim; ++block) {
    const auto digest = sha256(std::string(seed) + "#" + std::to_string(block));
    for (std::size_t i = 0; i + 4 <= digest.size() && out.size() < dim; i += 4) {
      std::uint32_t word = 0;
      std::memcpy(&word, digest.data() + i, 4);
      out.push_back(static_cast<double>(word) / 4294967295.0 * 2.0 - 1.0);
    }
  }
  return out;
}

/// Uniform value in [0, 1] derived from a string.
inline double hash_unit(std::string_view seed) {
  const auto digest = sha256(seed);
  std::uint64_t word = 0;
  std::memcpy(&word, digest.data(), 8);
  return static_cast<double>(word >> 11) / static_cast<double>((std::uint64_t{1} << 53) - 1);
}

struct MockOptions {
  std::size_t dim = 16;
  std::string model_id = "mock-v1";
  std::chrono::milliseconds latency{0};
  std::uint32_t max_side = 4096;
};

/// What the mock generator was asked for when it produced an image.
struct MockImageOrigin {
  std::string prompt;
  std::int64_t seed = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

class MockBackend final : public Transport {
 public:
  using Override = std::function<std::optional<WireResponse>(const json& request)>;
  using TextEmbeddingHook = std::function<std::optional<std::vector<double>>(const std::string&)>;
  using ImageEmbeddingHook = std::function<std::optional<std::vector<double>>(
      const std::string& png_sha256, const std::optional<MockImageOrigin>& origin)>;

  explicit MockBackend(MockOptions options = {}, std::string name = "mock")
      : options_(std::move(options)), name_(std::move(name)) {}

  WireResponse post(std::string_view route, const json& body,
                    std::chrono::milliseconds /*timeout*/) override {
    return handle(route, body);
  }

  std::string id() const override { return "mock://" + name_; }

  const MockOptions& options() const noexcept { return options_; }

  WireResponse handle(std::string_view route, const json& body) {
    InFlightScope scope(*this, route);
    if (options_.latency.count() > 0) std::this_thread::sleep_for(options_.latency);
    {
      std::lock_guard lock(mutex_);
      auto it = fail_next_.find(std::string(route));
      if (it != fail_next_.end() && it->second.remaining > 0) {
        --it->second.remaining;
        return protocol_error(it->second.status, "injected_failure", "injected failure");
      }
    }
    Override override_fn;
    {
      std::lock_guard lock(mutex_);
      if (auto it = overrides_.find(std::string(route)); it != overrides_.end()) {
        override_fn = it->second;
      }
    }
    if (override_fn) {
      if (auto response = override_fn(body)) return *response;
    }
    if (!body.is_object()) return protocol_error(400, "bad_request", "body must be a JSON object");
    try {
      if (route == kRouteTranslate) return translate(body);
      if (route == kRouteParaphrase) return paraphrase(body);
      if (route == kRouteGenerate) return generate(body);
      if (route == kRouteEmbedText) return embed_text(body);
      if (route == kRouteEmbedImage) return embed_image(body);
      if (route == kRouteJudge) return judge(body);
      if (route == kRouteReward) return reward(body);
      if (route == kRouteVqa) return vqa(body);
    } catch (const json::exception& e) {
      return protocol_error(400, "bad_request", e.what());
    } catch (const Error& e) {
      return protocol_error(400, "bad_request", e.what());
    }
    return protocol_error(404, "not_found", "unknown route " + std::string(route));
  }

  // --- observation -------------------------------------------------------

  std::size_t calls(std::string_view route) const {
    std::lock_guard lock(mutex_);
    auto it = calls_.find(std::string(route));
    return it == calls_.end() ? 0 : it->second;
  }

  std::size_t total_calls() const {
    std::lock_guard lock(mutex_);
    std::size_t total = 0;
    for (const auto& [route, n] : calls_) total += n;
    return total;
  }

  std::size_t peak_in_flight() const {
    std::lock_guard lock(mutex_);
    return peak_in_flight_;
  }

  void reset_counters() {
    std::lock_guard lock(mutex_);
    calls_.clear();
    peak_in_flight_ = 0;
  }

  // --- fault injection and planting --------------------------------------

  /// The next `count` requests to `route` fail with `status`.
  void fail_next(std::string_view route, std::size_t count, int status = 503) {
    std::lock_guard lock(mutex_);
    fail_next_[std::string(route)] = {count, status};
  }

  /// Runs before the built-in handler; returning nullopt falls through.
  void set_override(std::string_view route, Override fn) {
    std::lock_guard lock(mutex_);
    if (fn) {
      overrides_[std::string(route)] = std::move(fn);
    } else {
      overrides_.erase(std::string(route));
    }
  }

  void set_text_embedding_hook(TextEmbeddingHook fn) {
    std::lock_guard lock(mutex_);
    text_hook_ = std::move(fn);
  }

  void set_image_embedding_hook(ImageEmbeddingHook fn) {
    std::lock_guard lock(mutex_);
    image_hook_ = std::move(fn);
  }

  std::optional<MockImageOrigin> origin_of(const std::string& png_sha256) const {
    std::lock_guard lock(mutex_);
    auto it = origins_.find(png_sha256);
    if (it == origins_.end()) return std::nullopt;
    return it->second;
  }

  /// The default (unplanted) embedding the mock returns for a text.
  std::vector<double> default_text_embedding(std::string_view text) const {
    return hash_vector("text:" + std::string(text), options_.dim);
  }

  std::vector<double> default_image_embedding(const std::string& png_sha256) const {
    return hash_vector("image:" + png_sha256, options_.dim);
  }

  /// The PNG the generator returns for a request, without counting a call.
  std::vector<std::uint8_t> render_image(std::string_view prompt, std::int64_t seed,
                                         std::uint32_t width, std::uint32_t height) const {
    const json request = {{"prompt", prompt}, {"seed", seed}, {"width", width}, {"height", height}};
    const auto digest = sha256(canonical_json(request));
    std::uint64_t rng_seed = 0;
    std::memcpy(&rng_seed, digest.data(), 8);
    DeterministicRng rng(rng_seed);
    Image img{width, height, 3, {}};
    img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < img.pixels.size(); i += 8) {
      std::uint64_t word = rng.next();
      for (std::size_t j = i; j < std::min(i + 8, img.pixels.size()); ++j) {
        img.pixels[j] = static_cast<std::uint8_t>(word & 0xff);
        word >>= 8;
      }
    }
    return encode_png(img);
  }

 private:
  struct FailSpec {
    std::size_t remaining = 0;
    int status = 503;
  };

  class InFlightScope {
   public:
    InFlightScope(MockBackend& owner, std::string_view route) : owner_(owner) {
      std::lock_guard lock(owner_.mutex_);
      ++owner_.calls_[std::string(route)];
      ++owner_.in_flight_;
      owner_.peak_in_flight_ = std::max(owner_.peak_in_flight_, owner_.in_flight_);
    }
    ~InFlightScope() {
      std::lock_guard lock(owner_.mutex_);
      --owner_.in_flight_;
    }
    InFlightScope(const InFlightScope&) = delete;
    InFlightScope& operator=(const InFlightScope&) = delete;

   private:
    MockBackend& owner_;
  };

  static std::string required_string(const json& body, const char* field) {
    if (!body.contains(field) || !body[field].is_string()) {
      throw Error(Errc::schema, std::string("missing string field '") + field + "'");
    }
    return body[field].get<std::string>();
  }

  static std::vector<std::uint8_t> required_png(const json& body) {
    auto bytes = base64_decode(required_string(body, "image_b64"));
    (void)read_png_header(bytes);
    return bytes;
  }

  json embedding_body(const std::vector<double>& values) const {
    return {{"embedding", values}, {"dim", values.size()}, {"model_id", options_.model_id}};
  }

  WireResponse translate(const json& body) {
    const auto text = required_string(body, "text");
    const auto source = required_string(body, "source_lang");
    const auto target = required_string(body, "target_lang");
    if (source == target) {
      return protocol_error(400, "invalid_language_pair", "source and target language are equal");
    }
    return protocol_ok({{"text", "«" + target + "» " + text}});
  }

  WireResponse paraphrase(const json& body) {
    const auto text = required_string(body, "text");
    if (!body.contains("n") || !body["n"].is_number_integer() || body["n"].get<int>() < 1) {
      return protocol_error(400, "bad_request", "n must be a positive integer");
    }
    json texts = json::array();
    for (int i = 1; i <= body["n"].get<int>(); ++i) {
      texts.push_back(text + " ¶" + std::to_string(i));
    }
    return protocol_ok({{"texts", texts}});
  }

  WireResponse generate(const json& body) {
    const auto prompt = required_string(body, "prompt");
    const auto seed = body.at("seed").get<std::int64_t>();
    const auto width = body.at("width").get<std::int64_t>();
    const auto height = body.at("height").get<std::int64_t>();
    if (width < 1 || height < 1 || width > options_.max_side || height > options_.max_side) {
      return protocol_error(400, "bad_request", "image size out of bounds");
    }
    if (prompt.find("XREFUSE") != std::string::npos) {
      return protocol_error(422, "content_refused", "prompt refused by content policy");
    }
    const auto w = static_cast<std::uint32_t>(width);
    const auto h = static_cast<std::uint32_t>(height);
    auto png = render_image(prompt, seed, w, h);
    {
      std::lock_guard lock(mutex_);
      origins_[sha256_hex(png)] = MockImageOrigin{prompt, seed, w, h};
    }
    return protocol_ok({{"image_b64", base64_encode(png)}, {"width", w}, {"height", h}});
  }

  WireResponse embed_text(const json& body) {
    const auto text = required_string(body, "text");
    TextEmbeddingHook hook;
    {
      std::lock_guard lock(mutex_);
      hook = text_hook_;
    }
    if (hook) {
      if (auto planted = hook(text)) return protocol_ok(embedding_body(*planted));
    }
    return protocol_ok(embedding_body(default_text_embedding(text)));
  }

  WireResponse embed_image(const json& body) {
    const auto png = required_png(body);
    const auto digest = sha256_hex(png);
    ImageEmbeddingHook hook;
    {
      std::lock_guard lock(mutex_);
      hook = image_hook_;
    }
    if (hook) {
      if (auto planted = hook(digest, origin_of(digest))) {
        return protocol_ok(embedding_body(*planted));
      }
    }
    return protocol_ok(embedding_body(default_image_embedding(digest)));
  }

  WireResponse judge(const json& body) {
    const auto prompt = required_string(body, "prompt");
    (void)required_png(body);
    const bool fail = prompt.find("XFAIL") != std::string::npos;
    return protocol_ok({{"verdict", fail ? "incorrect" : "correct"}});
  }

  WireResponse reward(const json& body) {
    const auto prompt = required_string(body, "prompt");
    const auto png = required_png(body);
    return protocol_ok({{"score", hash_unit("reward:" + prompt + ":" + sha256_hex(png)) * 2 - 1}});
  }

  WireResponse vqa(const json& body) {
    const auto question = required_string(body, "question");
    const auto png = required_png(body);
    return protocol_ok({{"probability", hash_unit("vqa:" + question + ":" + sha256_hex(png))}});
  }

  MockOptions options_;
  std::string name_;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> calls_;
  std::size_t in_flight_ = 0;
  std::size_t peak_in_flight_ = 0;
  std::map<std::string, FailSpec> fail_next_;
  std::map<std::string, Override> overrides_;
  std::map<std::string, MockImageOrigin> origins_;
  TextEmbeddingHook text_hook_;
  ImageEmbeddingHook image_hook_;
};

/// Named mock instances addressed by `mock://<name>` endpoint URLs.
class MockRegistry {
 public:
  static MockRegistry& instance() {
    static MockRegistry registry;
    return registry;
  }

  std::shared_ptr<MockBackend> get(const std::string& name) {
    std::lock_guard lock(mutex_);
    auto& slot = backends_[name];
    if (!slot) slot = std::make_shared<MockBackend>(MockOptions{}, name);
    return slot;
  }

  /// Replaces (or creates) the instance behind `name`.
  std::shared_ptr<MockBackend> reset(const std::string& name, MockOptions options = {}) {
    std::lock_guard lock(mutex_);
    auto backend = std::make_shared<MockBackend>(std::move(options), name);
    backends_[name] = backend;
    return backend;
  }

  void clear() {
    std::lock_guard lock(mutex_);
    backends_.clear();
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<MockBackend>> backends_;
};

}  // namespace pmt2i
