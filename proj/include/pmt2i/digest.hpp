#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmt2i/error.hpp"

namespace pmt2i {

using json = nlohmann::json;

inline std::string to_hex(std::span<const unsigned char> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

inline std::array<unsigned char, 32> sha256(std::span<const std::uint8_t> data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::io, "SHA-256 computation failed");
  }
  return out;
}

inline std::array<unsigned char, 32> sha256(std::string_view data) {
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

inline std::string sha256_hex(std::string_view data) { return to_hex(sha256(data)); }

inline std::string sha256_hex(std::span<const std::uint8_t> data) {
  return to_hex(sha256(data));
}

/// Compact serialization with object keys in sorted order (nlohmann's default
/// object type is an ordered std::map).
inline std::string canonical_json(const json& value) {
  return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

struct CacheKey {
  std::string digest;

  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

inline CacheKey make_cache_key(std::string_view operation, const json& payload,
                               std::string_view model_id) {
  const json envelope = {{"operation", operation},
                         {"model_id", model_id},
                         {"request", payload}};
  return {sha256_hex(canonical_json(envelope))};
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                data.data(), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) {
    throw Error(Errc::schema, "base64 payload length is not a multiple of 4");
  }
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(Errc::schema, "invalid base64 payload");
  std::size_t size = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes that padding stands for.
  if (!text.empty() && text.back() == '=') --size;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

}  // namespace pmt2i
