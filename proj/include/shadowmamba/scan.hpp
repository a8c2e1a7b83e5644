#pragma once

// 2D -> 1D scan permutations. Three strategies: plain windowed local scan,
// pixel-level cross scan, and the boundary-region scan that first groups
// windows by their shadow class (0 = outside, 1 = boundary, 2 = inside) so
// same-class pixels sit closer together in the unrolled sequence. Reverse
// directions are defined as element-wise reversals of their forward
// counterparts, matching the flip convention of bidirectional scan blocks.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "shadowmamba/mask.hpp"
#include "shadowmamba/tensor.hpp"

namespace sm {

enum class Direction {
  horizontal,
  vertical,
  horizontal_reverse,
  vertical_reverse,
};

enum class Strategy { local, cross, boundary_region };

constexpr std::array<Direction, 4> kAllDirections = {
    Direction::horizontal, Direction::vertical, Direction::horizontal_reverse,
    Direction::vertical_reverse};

std::string to_string(Direction d);
std::string to_string(Strategy s);
Direction direction_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);

struct WindowClassGrid {
  int rows = 0, cols = 0, window = 0;
  std::vector<uint8_t> labels;  // row-major, values in {0,1,2}

  uint8_t at(int r, int c) const { return labels[(size_t)r * cols + c]; }
};

struct ScanOrder {
  std::vector<int64_t> perm;  // sequence position -> flat spatial index
  std::vector<int64_t> inv;   // flat spatial index -> sequence position
  Strategy strategy = Strategy::local;
  Direction direction = Direction::horizontal;
  int window = 0;  // 0 for cross orders
  int h = 0, w = 0;
};

// Labels each window x window tile: 0 if it contains no shadow pixels,
// 2 if it is entirely shadow, 1 otherwise. Dimensions must divide evenly.
WindowClassGrid classify_windows(const BinaryMask& mask, int window);

// Same labeling, but each window's class is derived from its full-resolution
// receptive region, summarized by the (any1, all1) pair of downsample_region.
WindowClassGrid classify_windows_region(const BinaryMask& any1,
                                        const BinaryMask& all1, int window);

ScanOrder build_local_order(int H, int W, int window, Direction d);
ScanOrder build_boundary_region_order(const WindowClassGrid& classes, int H,
                                      int W, int window, Direction d);
ScanOrder build_cross_order(int H, int W, Direction d);

// Window-start distances between same-category windows, summarizing how far
// apart a category's content sits in the 1D sequence.
struct CategoryDistanceStats {
  struct Entry {
    bool present = false;
    int64_t windows = 0;
    double mean = 0.0;   // mean pairwise |start_p - start_q|
    int64_t max = 0;
  };
  std::array<Entry, 3> category;
};

CategoryDistanceStats intra_category_distance_stats(
    const ScanOrder& order, const WindowClassGrid& classes);

// Differentiable gather along the permutation: x is [C x H x W] or [C x L],
// result is [C x L] with out[c][i] = x[c][perm[i]].
template <typename T>
Tensor<T> scan_apply(const ScanOrder& order, const Tensor<T>& x) {
  int64_t L = (int64_t)order.perm.size();
  if (x.shape.empty() || x.numel() % L != 0 ||
      x.numel() / L != x.shape[0])
    throw UsageError("scan_apply: tensor does not match order length");
  int C = x.shape[0];
  auto perm = std::make_shared<std::vector<int64_t>>(order.perm);
  Tensor<T> out = detail::make_out<T>({C, (int)L}, detail::want_grad(x));
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (int c = 0; c < C; ++c) {
    const T* xc = xp + (int64_t)c * L;
    T* oc = op + (int64_t)c * L;
    for (int64_t i = 0; i < L; ++i) oc[i] = xc[(*perm)[i]];
  }
  if (out.tracked()) {
    Tape<T>::active()->record([x, out, perm, C, L]() {
      if (!x.tracked()) return;
      const T* go = out.gptr();
      T* gx = x.grad->data();
      for (int c = 0; c < C; ++c) {
        const T* gc = go + (int64_t)c * L;
        T* gxc = gx + (int64_t)c * L;
        for (int64_t i = 0; i < L; ++i) gxc[(*perm)[i]] += gc[i];
      }
    });
  }
  return out;
}

// Inverse gather: places sequence element i back at spatial index perm[i].
template <typename T>
Tensor<T> scan_unapply(const ScanOrder& order, const Tensor<T>& y) {
  int64_t L = (int64_t)order.perm.size();
  if (y.shape.size() != 2 || y.shape[1] != (int)L)
    throw UsageError("scan_unapply: tensor does not match order length");
  int C = y.shape[0];
  auto inv = std::make_shared<std::vector<int64_t>>(order.inv);
  Tensor<T> out =
      detail::make_out<T>({C, order.h, order.w}, detail::want_grad(y));
  const T* yp = y.ptr();
  T* op = out.ptr();
  for (int c = 0; c < C; ++c) {
    const T* yc = yp + (int64_t)c * L;
    T* oc = op + (int64_t)c * L;
    for (int64_t p = 0; p < L; ++p) oc[p] = yc[(*inv)[p]];
  }
  if (out.tracked()) {
    Tape<T>::active()->record([y, out, inv, C, L]() {
      if (!y.tracked()) return;
      const T* go = out.gptr();
      T* gy = y.grad->data();
      for (int c = 0; c < C; ++c) {
        const T* gc = go + (int64_t)c * L;
        T* gyc = gy + (int64_t)c * L;
        for (int64_t p = 0; p < L; ++p) gyc[(*inv)[p]] += gc[p];
      }
    });
  }
  return out;
}

// Index builders for differentiable reflect-padding and cropping of CxHxW
// tensors (consumed by gather_flat).
IndexPtr reflect_pad_indices(int C, int H, int W, int H2, int W2);
IndexPtr crop_indices(int C, int H2, int W2, int H, int W);

inline int round_up(int x, int m) { return (x + m - 1) / m * m; }

}  // namespace sm
