#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "pmt2i/error.hpp"

namespace pmt2i {

/// 8-bit interleaved pixels, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 3;
  std::vector<std::uint8_t> pixels;

  std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t c) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

struct PngImageGuard {
  png_image* image;
  ~PngImageGuard() { png_image_free(image); }
};

inline void check_image_shape(const Image& img) {
  if (img.width == 0 || img.height == 0) {
    throw Error(Errc::invalid_image, "image has zero width or height");
  }
  if (img.channels != 1 && img.channels != 3) {
    throw Error(Errc::invalid_image, "only gray and RGB images are supported");
  }
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw Error(Errc::invalid_image, "pixel buffer size does not match dimensions");
  }
}

}  // namespace detail

struct PngHeader {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

/// Parses the PNG signature and IHDR only.
inline PngHeader read_png_header(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  detail::PngImageGuard guard{&image};
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0 ||
      !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(Errc::invalid_image, "not a decodable PNG");
  }
  return {image.width, image.height};
}

/// Alpha is composited over black; palettes and 16-bit samples are expanded.
inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  detail::PngImageGuard guard{&image};
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0 ||
      !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(Errc::invalid_image, "not a decodable PNG");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out;
  out.width = image.width;
  out.height = image.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&image, &background, out.pixels.data(), 0, nullptr)) {
    throw Error(Errc::invalid_image, std::string("PNG decode failed: ") + image.message);
  }
  return out;
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  detail::check_image_shape(img);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = img.width;
  image.height = img.height;
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  detail::PngImageGuard guard{&image};
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(Errc::invalid_image, std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0,
                                 nullptr)) {
    throw Error(Errc::invalid_image, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline Image to_rgb(const Image& img) {
  detail::check_image_shape(img);
  if (img.channels == 3) return img;
  Image out{img.width, img.height, 3, {}};
  out.pixels.reserve(img.pixels.size() * 3);
  for (std::uint8_t v : img.pixels) out.pixels.insert(out.pixels.end(), {v, v, v});
  return out;
}

/// Bilinear resampling with pixel-center alignment and edge clamping; a
/// same-size resize is the identity.
inline Image resize_bilinear(const Image& img, std::uint32_t width, std::uint32_t height) {
  detail::check_image_shape(img);
  if (width == 0 || height == 0) {
    throw Error(Errc::invalid_argument, "resize target must be at least 1x1");
  }
  if (img.width == width && img.height == height) return img;
  Image out{width, height, img.channels, {}};
  out.pixels.resize(static_cast<std::size_t>(width) * height * img.channels);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (std::uint32_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const auto y0 = static_cast<std::uint32_t>(fy);
    const std::uint32_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (std::uint32_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const auto x0 = static_cast<std::uint32_t>(fx);
      const std::uint32_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (std::uint32_t c = 0; c < img.channels; ++c) {
        const double top = img.pixels[img.index(x0, y0, c)] * (1 - wx) +
                           img.pixels[img.index(x1, y0, c)] * wx;
        const double bottom = img.pixels[img.index(x0, y1, c)] * (1 - wx) +
                              img.pixels[img.index(x1, y1, c)] * wx;
        const double v = top * (1 - wy) + bottom * wy;
        out.pixels[out.index(x, y, c)] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace pmt2i
