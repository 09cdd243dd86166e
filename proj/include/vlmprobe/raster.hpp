#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlmprobe/util.hpp"

namespace vlmprobe {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB raster, row-major, no padding.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  Rgb at(int x, int y) const noexcept {
    const auto* p = &pixels_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) noexcept {
    auto* p = &pixels_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// PNG encoding through libpng's simplified API: no tIME/text chunks, so the
/// output bytes depend only on the pixels.
Bytes encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);

/// Reads dimensions from a PNG IHDR or JPEG SOF marker without decoding.
std::optional<ImageSize> probe_image_size(std::span<const std::uint8_t> bytes);

/// "png", "jpeg", or empty when the magic bytes are not recognized.
std::string sniff_image_format(std::span<const std::uint8_t> bytes);

/// Fully decodes PNG or JPEG data; throws ImageDecodeError on failure.
ImageSize verify_decodes(std::span<const std::uint8_t> bytes);

}  // namespace vlmprobe
