// SPDX-License-Identifier: Apache-2.0
#include "stereodet/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "stereodet/error.hpp"

namespace stereodet {

GrayImage to_luminance(const Image& image) {
  GrayImage g(image.width, image.height);
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned r = image.rgb[3 * i], gr = image.rgb[3 * i + 1], b = image.rgb[3 * i + 2];
    // Weights scaled by 1000; +500 rounds half up.
    g.pixels[i] = static_cast<std::uint8_t>((299 * r + 587 * gr + 114 * b + 500) / 1000);
  }
  return g;
}

Image mirror_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(image.width - 1 - x, y, c) = image.at(x, y, c);
  return out;
}

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw InputError("cannot open " + path.string());
  return f;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw InputError(path.string() + ": not a binary PPM (P6)");
  auto next_int = [&]() {
    int v = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      break;
    }
    if (!(in >> v)) throw InputError(path.string() + ": truncated PPM header");
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0) throw InputError(path.string() + ": invalid PPM size");
  if (maxval != 255) throw InputError(path.string() + ": only 8-bit PPM is supported");
  in.get();  // single whitespace after maxval
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw InputError(path.string() + ": truncated PPM data");
  }
  return img;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw InputError(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

/// Decodes to 8-bit RGB, or 16-bit gray when `gray16` is set.
void read_png_rows(const std::filesystem::path& path, bool gray16, int& width, int& height,
                   std::vector<std::uint8_t>& bytes) {
  auto f = open_file(path, "rb");
  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  r.info = png_create_info_struct(r.png);
  if (!r.png || !r.info) throw InputError("png: out of memory");
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);
  width = static_cast<int>(png_get_image_width(r.png, r.info));
  height = static_cast<int>(png_get_image_height(r.png, r.info));
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (gray16) {
    if (color != PNG_COLOR_TYPE_GRAY || depth != 16) {
      throw InputError(path.string() + ": expected a 16-bit grayscale PNG");
    }
    png_set_swap(r.png);  // little-endian host order
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (depth == 16) png_set_strip_16(r.png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(r.png);
  }
  png_read_update_info(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  bytes.resize(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = bytes.data() + rowbytes * y;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
}

void write_png_rows(const std::filesystem::path& path, int width, int height, int color, int depth,
                    const std::uint8_t* data, std::size_t rowbytes, bool swap) {
  auto f = open_file(path, "wb");
  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  w.info = png_create_info_struct(w.png);
  if (!w.png || !w.info) throw InputError("png: out of memory");
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (swap) png_set_swap(w.png);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data + rowbytes * y);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw InputError("cannot open " + path.string());
  char sig[8] = {};
  probe.read(sig, 8);
  if (probe.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
  if (probe.gcount() == 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(sig), 0, 8) == 0) {
    Image img;
    read_png_rows(path, false, img.width, img.height, img.rgb);
    return img;
  }
  throw InputError(path.string() + ": unsupported image format (PNG or binary PPM expected)");
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

void write_png(const Image& image, const std::filesystem::path& path) {
  write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, image.rgb.data(),
                 static_cast<std::size_t>(image.width) * 3, false);
}

void write_png16(int width, int height, const std::vector<std::uint16_t>& values, const std::filesystem::path& path) {
  if (values.size() != static_cast<std::size_t>(width) * height) {
    throw InputError("write_png16: value count does not match " + std::to_string(width) + "x" +
                     std::to_string(height));
  }
  write_png_rows(path, width, height, PNG_COLOR_TYPE_GRAY, 16, reinterpret_cast<const std::uint8_t*>(values.data()),
                 static_cast<std::size_t>(width) * 2, true);
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& width, int& height) {
  std::vector<std::uint8_t> bytes;
  read_png_rows(path, true, width, height, bytes);
  std::vector<std::uint16_t> values(static_cast<std::size_t>(width) * height);
  std::memcpy(values.data(), bytes.data(), values.size() * 2);
  return values;
}

}  // namespace stereodet
