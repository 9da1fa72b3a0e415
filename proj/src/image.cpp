// SPDX-License-Identifier: Apache-2.0
#include "atr/image.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "atr/error.hpp"
#include "atr/fs_util.hpp"

namespace atr {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill[0];
    data[i + 1] = fill[1];
    data[i + 2] = fill[2];
  }
}

Image Image::crop(const PixelRect& r) const {
  if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > width || r.y1 > height)
    throw PreconditionError("crop rectangle outside image");
  Image out(r.width(), r.height());
  const std::size_t row = static_cast<std::size_t>(r.width()) * 3;
  for (int y = r.y0; y < r.y1; ++y) std::memcpy(out.px(0, y - r.y0), px(r.x0, y), row);
  return out;
}

namespace {

struct PngImage {
  png_image img{};
  PngImage() {
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw PreconditionError("cannot encode an empty image");
  PngImage png;
  png.img.width = static_cast<png_uint_32>(img.width);
  png.img.height = static_cast<png_uint_32>(img.height);
  png.img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, img.data.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + png.img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, img.data.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + png.img.message);
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode failed: ") + png.img.message);
  png.img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(png.img.width), static_cast<int>(png.img.height));
  if (!png_image_finish_read(&png.img, nullptr, out.data.data(), 0, nullptr))
    throw IoError(std::string("png decode failed: ") + png.img.message);
  return out;
}

Image read_png(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_png(const Image& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(img));
}

ImageSize read_png_size(const std::filesystem::path& path) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.img, path.c_str()))
    throw IoError(path.string() + ": " + png.img.message);
  return {static_cast<int>(png.img.width), static_cast<int>(png.img.height)};
}

}  // namespace atr
