#include "shadowmamba/mask.hpp"

#include <stdexcept>

#include "shadowmamba/tensor.hpp"

namespace sm {

namespace {

void check_se(const StructuringElement& se) {
  if (se.size < 3 || se.size % 2 == 0)
    throw UsageError("structuring element must be square, odd, size >= 3");
}

// Square structuring elements separate into two 1D passes (min/max over an
// interval each way). `all` selects erosion semantics, otherwise dilation.
BinaryMask run_1d(const BinaryMask& m, int r, bool all, bool rows,
                  uint8_t pad) {
  BinaryMask out(m.h, m.w);
  int outer = rows ? m.h : m.w;
  int inner = rows ? m.w : m.h;
  for (int o = 0; o < outer; ++o) {
    for (int i = 0; i < inner; ++i) {
      uint8_t acc = all ? 1 : 0;
      for (int d = -r; d <= r; ++d) {
        int ii = i + d;
        uint8_t v = (ii < 0 || ii >= inner)
                        ? pad
                        : (rows ? m.at(o, ii) : m.at(ii, o));
        if (all)
          acc = (uint8_t)(acc & v);
        else
          acc = (uint8_t)(acc | v);
      }
      if (rows)
        out.set(o, i, acc);
      else
        out.set(i, o, acc);
    }
  }
  return out;
}

BinaryMask morph(const BinaryMask& m, const StructuringElement& se, bool all,
                 uint8_t pad) {
  check_se(se);
  int r = se.size / 2;
  return run_1d(run_1d(m, r, all, true, pad), r, all, false, pad);
}

}  // namespace

BinaryMask erode(const BinaryMask& m, const StructuringElement& se,
                 uint8_t pad) {
  return morph(m, se, true, pad);
}

BinaryMask dilate(const BinaryMask& m, const StructuringElement& se,
                  uint8_t pad) {
  return morph(m, se, false, pad);
}

BinaryMask opening(const BinaryMask& m, const StructuringElement& se) {
  return dilate(erode(m, se), se);
}

BinaryMask closing(const BinaryMask& m, const StructuringElement& se) {
  return erode(dilate(m, se), se);
}

BinaryMask complement(const BinaryMask& m) {
  BinaryMask out(m.h, m.w);
  for (size_t i = 0; i < m.bits.size(); ++i) out.bits[i] = m.bits[i] ? 0 : 1;
  return out;
}

BinaryMask denoise_mask(const BinaryMask& m, const StructuringElement& se,
                        int rough_dilate_radius) {
  if (rough_dilate_radius < 1)
    throw UsageError("denoise_mask: rough_dilate_radius must be >= 1");
  BinaryMask rough = closing(opening(m, se), se);
  for (int i = 0; i < rough_dilate_radius; ++i) rough = dilate(rough, se);
  BinaryMask out(m.h, m.w);
  for (size_t i = 0; i < m.bits.size(); ++i)
    out.bits[i] = (uint8_t)(m.bits[i] & rough.bits[i]);
  return out;
}

std::pair<BinaryMask, BinaryMask> downsample_region(const BinaryMask& m,
                                                    int factor) {
  if (factor < 1 || (factor & (factor - 1)) != 0)
    throw UsageError("downsample_region: factor must be a power of two");
  if (m.h % factor != 0 || m.w % factor != 0)
    throw std::logic_error("downsample_region: dimensions not divisible");
  int H = m.h / factor, W = m.w / factor;
  BinaryMask any1(H, W, 0), all1(H, W, 1);
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j) {
      uint8_t v = m.at(i, j);
      int bi = i / factor, bj = j / factor;
      if (v)
        any1.set(bi, bj, 1);
      else
        all1.set(bi, bj, 0);
    }
  return {any1, all1};
}

int reflect_index(int x, int n) {
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  x = ((x % period) + period) % period;
  return x < n ? x : period - x;
}

BinaryMask pad_reflect(const BinaryMask& m, int target_h, int target_w) {
  if (target_h < m.h || target_w < m.w)
    throw UsageError("pad_reflect: target smaller than input");
  BinaryMask out(target_h, target_w);
  for (int i = 0; i < target_h; ++i)
    for (int j = 0; j < target_w; ++j)
      out.set(i, j, m.at(reflect_index(i, m.h), reflect_index(j, m.w)));
  return out;
}

}  // namespace sm
