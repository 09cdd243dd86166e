#include "vlmprobe/raster.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>

// jpeglib.h relies on FILE and size_t being declared first.
#include <jpeglib.h>

#include <fmt/format.h>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ConfigError(fmt::format("invalid image size {}x{}", width, height));
  pixels_.resize(3 * static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill.r;
    pixels_[i + 1] = fill.g;
    pixels_[i + 2] = fill.b;
  }
}

Bytes encode_png(const Image& image) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width());
  desc.height = static_cast<png_uint_32>(image.height());
  desc.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.pixels().data(), 0, nullptr)) {
    throw IoError(fmt::format("png sizing failed: {}", desc.message));
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.pixels().data(), 0, nullptr)) {
    throw IoError(fmt::format("png encode failed: {}", desc.message));
  }
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw ImageDecodeError(fmt::format("png header: {}", desc.message));
  }
  desc.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(desc.width), static_cast<int>(desc.height), Rgb{});
  if (!png_image_finish_read(&desc, nullptr, const_cast<std::uint8_t*>(image.pixels().data()), 0, nullptr)) {
    png_image_free(&desc);
    throw ImageDecodeError(fmt::format("png decode: {}", desc.message));
  }
  return image;
}

std::string sniff_image_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return "png";
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) return "jpeg";
  return {};
}

std::optional<ImageSize> probe_image_size(std::span<const std::uint8_t> bytes) {
  auto be16 = [&](std::size_t i) { return (bytes[i] << 8) | bytes[i + 1]; };
  auto be32 = [&](std::size_t i) {
    return static_cast<int>((std::uint32_t{bytes[i]} << 24) | (std::uint32_t{bytes[i + 1]} << 16) |
                            (std::uint32_t{bytes[i + 2]} << 8) | bytes[i + 3]);
  };
  const auto format = sniff_image_format(bytes);
  if (format == "png") {
    if (bytes.size() < 24) return std::nullopt;
    return ImageSize{be32(16), be32(20)};
  }
  if (format == "jpeg") {
    std::size_t i = 2;
    while (i + 9 < bytes.size()) {
      if (bytes[i] != 0xff) return std::nullopt;
      const std::uint8_t marker = bytes[i + 1];
      if (marker == 0xff) {
        ++i;
        continue;
      }
      const bool sof = marker >= 0xc0 && marker <= 0xcf && marker != 0xc4 && marker != 0xc8 && marker != 0xcc;
      if (sof) return ImageSize{be16(i + 7), be16(i + 5)};
      i += 2 + static_cast<std::size_t>(be16(i + 2));
    }
  }
  return std::nullopt;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ImageSize decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  std::vector<JSAMPLE> row;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageDecodeError(fmt::format("jpeg decode: {}", err.message));
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  jpeg_start_decompress(&cinfo);
  row.resize(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW rows[1] = {row.data()};
    jpeg_read_scanlines(&cinfo, rows, 1);
  }
  const ImageSize size{static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height)};
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return size;
}

}  // namespace

ImageSize verify_decodes(std::span<const std::uint8_t> bytes) {
  const auto format = sniff_image_format(bytes);
  if (format == "png") {
    const auto image = decode_png(bytes);
    return {image.width(), image.height()};
  }
  if (format == "jpeg") return decode_jpeg(bytes);
  throw ImageDecodeError("unrecognized image format (expected PNG or JPEG)");
}

}  // namespace vlmprobe
