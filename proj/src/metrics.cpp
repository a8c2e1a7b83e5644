#include "shadowmamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "shadowmamba/tensor.hpp"  // UsageError

namespace sm {
namespace {

void check_pair(const Image& a, const Image& b, const BinaryMask* region) {
  if (a.h <= 0 || a.w <= 0 || a.c <= 0)
    throw UsageError("metrics: empty image");
  if (a.h != b.h || a.w != b.w || a.c != b.c)
    throw UsageError("metrics: image shapes differ");
  if (region && (region->h != a.h || region->w != a.w))
    throw UsageError("metrics: region mask shape differs from images");
}

inline double srgb_linearize(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

// sRGB -> XYZ (D65). White = row sums, so for equal RGB the normalized
// X/Xn, Y/Yn, Z/Zn agree to rounding error and a/b stay pinned near zero.
constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

inline double lab_f(double t) {
  constexpr double kDelta = 6.0 / 29.0;
  constexpr double kDelta3 = kDelta * kDelta * kDelta;
  return t > kDelta3 ? std::cbrt(t)
                     : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

}  // namespace

Image srgb_to_lab(const Image& img) {
  if (img.c != 3) throw UsageError("srgb_to_lab: expected a 3-channel image");
  Image lab(3, img.h, img.w);
  const double wx = kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2];
  const double wy = kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2];
  const double wz = kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2];
  const int64_t n = (int64_t)img.h * img.w;
  for (int64_t p = 0; p < n; ++p) {
    const double r = srgb_linearize(img.chw[p]);
    const double g = srgb_linearize(img.chw[n + p]);
    const double b = srgb_linearize(img.chw[2 * n + p]);
    const double x = kRgbToXyz[0][0] * r + kRgbToXyz[0][1] * g + kRgbToXyz[0][2] * b;
    const double y = kRgbToXyz[1][0] * r + kRgbToXyz[1][1] * g + kRgbToXyz[1][2] * b;
    const double z = kRgbToXyz[2][0] * r + kRgbToXyz[2][1] * g + kRgbToXyz[2][2] * b;
    const double fx = lab_f(x / wx);
    const double fy = lab_f(y / wy);
    const double fz = lab_f(z / wz);
    lab.chw[p] = 116.0 * fy - 16.0;
    lab.chw[n + p] = 500.0 * (fx - fy);
    lab.chw[2 * n + p] = 200.0 * (fy - fz);
  }
  return lab;
}

double mse(const Image& a, const Image& b, const BinaryMask* region) {
  check_pair(a, b, region);
  const int64_t n = (int64_t)a.h * a.w;
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t p = 0; p < n; ++p) {
    if (region && !region->bits[p]) continue;
    for (int ch = 0; ch < a.c; ++ch) {
      const double d = a.chw[ch * n + p] - b.chw[ch * n + p];
      acc += d * d;
    }
    ++count;
  }
  if (count == 0) throw UsageError("mse: region contains no pixels");
  return acc / ((double)count * a.c);
}

double psnr(const Image& a, const Image& b, const BinaryMask* region) {
  const double m = mse(a, b, region);
  if (m <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / m));
}

namespace {

// Normalized 11-tap Gaussian, sigma 1.5, centered at tap 5.
std::vector<double> ssim_window() {
  std::vector<double> w(11);
  double s = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable valid-window filter: in is h x w, out is h x (w-10) after the
// horizontal pass and (h-10) x (w-10) after the vertical pass.
void filter_rows(const double* in, int h, int w, const std::vector<double>& k,
                 std::vector<double>& out) {
  const int ow = w - 10;
  out.assign((size_t)h * ow, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < 11; ++t) s += k[t] * in[(size_t)i * w + j + t];
      out[(size_t)i * ow + j] = s;
    }
}

void filter_cols(const std::vector<double>& in, int h, int ow,
                 const std::vector<double>& k, std::vector<double>& out) {
  const int oh = h - 10;
  out.assign((size_t)oh * ow, 0.0);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < 11; ++t) s += k[t] * in[(size_t)(i + t) * ow + j];
      out[(size_t)i * ow + j] = s;
    }
}

void gauss_valid(const double* in, int h, int w, const std::vector<double>& k,
                 std::vector<double>& tmp, std::vector<double>& out) {
  filter_rows(in, h, w, k, tmp);
  filter_cols(tmp, h, w - 10, k, out);
}

}  // namespace

double ssim(const Image& a, const Image& b, const BinaryMask* region) {
  check_pair(a, b, region);
  if (a.h < 11 || a.w < 11)
    throw UsageError("ssim: image smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2 with L = 1
  constexpr double kC2 = 0.03 * 0.03;
  const std::vector<double> k = ssim_window();
  const int64_t n = (int64_t)a.h * a.w;
  const int oh = a.h - 10, ow = a.w - 10;

  std::vector<double> prod((size_t)n), tmp, mu_a, mu_b, m_aa, m_bb, m_ab;
  double acc = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < a.c; ++ch) {
    const double* pa = a.chw.data() + (size_t)ch * n;
    const double* pb = b.chw.data() + (size_t)ch * n;
    gauss_valid(pa, a.h, a.w, k, tmp, mu_a);
    gauss_valid(pb, a.h, a.w, k, tmp, mu_b);
    for (int64_t p = 0; p < n; ++p) prod[p] = pa[p] * pa[p];
    gauss_valid(prod.data(), a.h, a.w, k, tmp, m_aa);
    for (int64_t p = 0; p < n; ++p) prod[p] = pb[p] * pb[p];
    gauss_valid(prod.data(), a.h, a.w, k, tmp, m_bb);
    for (int64_t p = 0; p < n; ++p) prod[p] = pa[p] * pb[p];
    gauss_valid(prod.data(), a.h, a.w, k, tmp, m_ab);

    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        if (region && !region->bits[(size_t)(i + 5) * a.w + (j + 5)]) continue;
        const size_t p = (size_t)i * ow + j;
        const double ma = mu_a[p], mb = mu_b[p];
        const double va = m_aa[p] - ma * ma;
        const double vb = m_bb[p] - mb * mb;
        const double cov = m_ab[p] - ma * mb;
        acc += (2.0 * ma * mb + kC1) * (2.0 * cov + kC2) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        ++count;
      }
  }
  if (count == 0)
    throw UsageError("ssim: region contains no valid window centers");
  return acc / (double)count;
}

double rmae_lab(const Image& a, const Image& b, const BinaryMask* region) {
  check_pair(a, b, region);
  if (a.c != 3) throw UsageError("rmae_lab: expected 3-channel images");
  const Image la = srgb_to_lab(a);
  const Image lb = srgb_to_lab(b);
  const int64_t n = (int64_t)a.h * a.w;
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t p = 0; p < n; ++p) {
    if (region && !region->bits[p]) continue;
    for (int ch = 0; ch < 3; ++ch)
      acc += std::abs(la.chw[ch * n + p] - lb.chw[ch * n + p]);
    ++count;
  }
  if (count == 0) throw UsageError("rmae_lab: region contains no pixels");
  return acc / (3.0 * (double)count);
}

MetricReport evaluate_pair(const Image& restored, const Image& target,
                           const BinaryMask& mask) {
  check_pair(restored, target, &mask);
  MetricReport rep;
  const int64_t n = (int64_t)mask.h * mask.w;
  BinaryMask inv(mask.h, mask.w);
  for (int64_t p = 0; p < n; ++p) {
    inv.bits[p] = mask.bits[p] ? 0 : 1;
    (mask.bits[p] ? rep.shadow_pixels : rep.non_shadow_pixels)++;
  }
  // A region can be nonempty yet contain no valid window centers (every
  // pixel within 5 of the border); SSIM is undefined there, the rest is not.
  auto region_ssim = [&](const BinaryMask* region) {
    try {
      return ssim(restored, target, region);
    } catch (const UsageError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  rep.all = {psnr(restored, target), ssim(restored, target),
             rmae_lab(restored, target)};
  rep.has_shadow = rep.shadow_pixels > 0;
  rep.has_non_shadow = rep.non_shadow_pixels > 0;
  if (rep.has_shadow)
    rep.shadow = {psnr(restored, target, &mask), region_ssim(&mask),
                  rmae_lab(restored, target, &mask)};
  if (rep.has_non_shadow)
    rep.non_shadow = {psnr(restored, target, &inv), region_ssim(&inv),
                      rmae_lab(restored, target, &inv)};
  return rep;
}

}  // namespace sm
