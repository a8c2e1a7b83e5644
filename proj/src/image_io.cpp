#include "shadowmamba/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "shadowmamba/tensor.hpp"

namespace sm {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open PNG for reading: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode PNG: " + path);
  }
  png_init_io(png, fp.get());
  // Normalize to 8-bit, no alpha; palettes expand to RGB, gray stays gray.
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA |
                   PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_PACKING,
               nullptr);

  int h = (int)png_get_image_height(png, info);
  int w = (int)png_get_image_width(png, info);
  int ch = (int)png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG channel count in " + path);
  }
  Image img(ch, h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < ch; ++c)
        img.at(c, i, j) = rows[i][j * ch + c] / 255.0;
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3)
    throw UsageError("write_png: image must have 1 or 3 channels");
  if (img.h <= 0 || img.w <= 0) throw UsageError("write_png: empty image");

  std::vector<png_byte> flat((size_t)img.h * img.w * img.c);
  std::vector<png_bytep> rows(img.h);
  for (int i = 0; i < img.h; ++i) {
    rows[i] = flat.data() + (size_t)i * img.w * img.c;
    for (int j = 0; j < img.w; ++j)
      for (int c = 0; c < img.c; ++c) {
        double v = std::min(1.0, std::max(0.0, img.at(c, i, j)));
        rows[i][j * img.c + c] = (png_byte)std::lround(v * 255.0);
      }
  }

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open PNG for writing: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

BinaryMask read_mask_png(const std::string& path) {
  Image img = read_png(path);
  if (img.h == 0 || img.w == 0) throw DataError("empty mask image: " + path);
  BinaryMask m(img.h, img.w);
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j) {
      double sum = 0;
      for (int c = 0; c < img.c; ++c) sum += img.at(c, i, j);
      // Channel values are exact multiples of 1/255, so this threshold is
      // precisely "level >= 128".
      m.set(i, j, sum / img.c >= 128.0 / 255.0 ? 1 : 0);
    }
  return m;
}

void write_mask_png(const std::string& path, const BinaryMask& m) {
  Image img(1, m.h, m.w);
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j) img.at(0, i, j) = m.at(i, j) ? 1.0 : 0.0;
  write_png(path, img);
}

}  // namespace sm
