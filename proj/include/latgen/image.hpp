#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include "latgen/error.hpp"
#include "latgen/fs_util.hpp"
#include "latgen/tensor.hpp"

namespace latgen {

// 8-bit RGB, row-major, channels interleaved.
struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

// Maps [-1, 1] to [0, 255] with round-half-up, clamping outliers.
inline std::uint8_t to_byte(double v) {
  const double scaled = std::floor((v + 1.0) / 2.0 * 255.0 + 0.5);
  if (!(scaled > 0.0)) return 0;  // also catches NaN
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(scaled);
}

inline ImageBuffer tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[0] != 3) {
    fail(ErrorCode::Shape, "tensor_to_image expects [3,H,W], got " + shape_string(t.shape()));
  }
  const std::size_t h = t.shape()[1], w = t.shape()[2];
  ImageBuffer img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      auto* px = img.pixel(x, y);
      for (std::size_t c = 0; c < 3; ++c) px[c] = to_byte(t.at(c, y, x));
    }
  }
  return img;
}

// Row-major tiling from the top-left; cells past the last image and the
// gutters between tiles are filled with pad_value.
inline ImageBuffer compose_grid(std::span<const ImageBuffer> images, std::size_t cols, std::size_t pad_px = 0,
                                std::uint8_t pad_value = 0) {
  require(!images.empty(), ErrorCode::InvalidArgument, "compose_grid needs at least one image");
  require(cols >= 1, ErrorCode::InvalidArgument, "compose_grid needs cols >= 1");
  const std::size_t tw = images.front().width, th = images.front().height;
  for (const auto& img : images) {
    if (img.width != tw || img.height != th) {
      fail(ErrorCode::InvalidArgument, "compose_grid images must share dimensions");
    }
  }
  const std::size_t rows = (images.size() + cols - 1) / cols;
  ImageBuffer grid(cols * tw + (cols - 1) * pad_px, rows * th + (rows - 1) * pad_px, pad_value);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t x0 = (i % cols) * (tw + pad_px);
    const std::size_t y0 = (i / cols) * (th + pad_px);
    for (std::size_t y = 0; y < th; ++y) {
      std::copy_n(images[i].pixel(0, y), tw * 3, grid.pixel(x0, y0 + y));
    }
  }
  return grid;
}

inline std::string encode_png_bytes(const ImageBuffer& img) {
  require(img.width > 0 && img.height > 0 && img.pixels.size() == img.width * img.height * 3,
          ErrorCode::InvalidArgument, "image buffer size does not match its dimensions");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    fail(ErrorCode::Io, std::string("png encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    fail(ErrorCode::Io, std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline ImageBuffer decode_png_bytes(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorCode::Format, std::string("png decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  ImageBuffer img(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::Format, std::string("png decode failed: ") + image.message);
  }
  return img;
}

inline void encode_png(const ImageBuffer& img, const fs::path& path) {
  write_file_atomic(path, encode_png_bytes(img));
}

inline ImageBuffer decode_png(const fs::path& path) {
  return decode_png_bytes(read_file(path));
}

}  // namespace latgen
