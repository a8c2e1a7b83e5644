#pragma once

// 8-bit PNG in, [0,1] doubles out (and back). Grayscale files keep one
// channel; everything else is normalized to RGB. Mask files threshold at 128.

#include <string>
#include <vector>

#include "shadowmamba/mask.hpp"

namespace sm {

struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> chw;  // channel-major, values in [0,1]

  Image() = default;
  Image(int channels, int height, int width)
      : h(height), w(width), c(channels),
        chw((size_t)channels * height * width, 0.0) {}

  double at(int ch, int i, int j) const {
    return chw[((size_t)ch * h + i) * w + j];
  }
  double& at(int ch, int i, int j) { return chw[((size_t)ch * h + i) * w + j]; }
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

BinaryMask read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const BinaryMask& m);

}  // namespace sm
