#pragma once

// Binary shadow masks and the morphological denoising pipeline: open to drop
// speckle, close to fill pinholes, dilate into a rough coverage mask, then
// multiply element-wise with the original so surviving regions keep their
// exact boundaries.

#include <cstdint>
#include <utility>
#include <vector>

namespace sm {

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> bits;  // row-major, values in {0,1}; 1 = shadow

  BinaryMask() = default;
  BinaryMask(int height, int width, uint8_t fill = 0)
      : h(height), w(width), bits((size_t)height * width, fill) {}

  uint8_t at(int i, int j) const { return bits[(size_t)i * w + j]; }
  void set(int i, int j, uint8_t v) { bits[(size_t)i * w + j] = v; }
  bool operator==(const BinaryMask& o) const {
    return h == o.h && w == o.w && bits == o.bits;
  }
};

struct StructuringElement {
  int size = 3;  // square side, odd, >= 3
};

// pad is the value assumed outside the image (0 = non-shadow). Exposing it
// keeps erosion and dilation exact duals under complement.
BinaryMask erode(const BinaryMask& m, const StructuringElement& se,
                 uint8_t pad = 0);
BinaryMask dilate(const BinaryMask& m, const StructuringElement& se,
                  uint8_t pad = 0);
BinaryMask opening(const BinaryMask& m, const StructuringElement& se);
BinaryMask closing(const BinaryMask& m, const StructuringElement& se);
BinaryMask complement(const BinaryMask& m);

// M_denoised = M ⊙ dilate^radius(close(open(M))).
BinaryMask denoise_mask(const BinaryMask& m, const StructuringElement& se,
                        int rough_dilate_radius = 5);

// Block-reduces by a power-of-two factor. Returns (any1, all1): any1 marks
// blocks containing at least one shadow pixel, all1 marks fully-shadow blocks.
std::pair<BinaryMask, BinaryMask> downsample_region(const BinaryMask& m,
                                                    int factor);

// Extends to target dimensions by mirroring edge-inclusive (index pattern
// ... 2 1 0 1 2 ... around each border). Target must be >= current size.
BinaryMask pad_reflect(const BinaryMask& m, int target_h, int target_w);

// Maps x into [0, n) by edge-inclusive reflection; n == 1 collapses to 0.
int reflect_index(int x, int n);

}  // namespace sm
