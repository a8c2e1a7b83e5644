#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "shadowmamba/metrics.hpp"
#include "shadowmamba/tensor.hpp"

using namespace sm;

namespace {

Image rand_img(int c, int h, int w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(c, h, w);
  for (double& v : img.chw) v = u(rng);
  return img;
}

Image const_img(int c, int h, int w, double r, double g, double b) {
  Image img(c, h, w);
  const int64_t n = (int64_t)h * w;
  for (int64_t p = 0; p < n; ++p) {
    img.chw[p] = r;
    if (c > 1) img.chw[n + p] = g;
    if (c > 2) img.chw[2 * n + p] = b;
  }
  return img;
}

BinaryMask rand_mask(int h, int w, uint64_t seed, double p_one = 0.5) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution bit(p_one);
  BinaryMask m(h, w);
  for (auto& v : m.bits) v = bit(rng) ? 1 : 0;
  // guarantee both regions are populated
  m.bits.front() = 1;
  m.bits.back() = 0;
  return m;
}

// Inverse of the gray Lab pipeline: the sRGB value whose gray has lightness L.
double gray_for_lightness(double L) {
  const double fy = (L + 16.0) / 116.0;
  const double ylin = fy * fy * fy;
  return ylin <= 0.0031308 ? 12.92 * ylin
                           : 1.055 * std::pow(ylin, 1.0 / 2.4) - 0.055;
}

// Reference SSIM: per-center double loops over the full 11x11 window, no
// separable filtering. Same statistics, computed the slow direct way.
double direct_ssim(const Image& a, const Image& b,
                   const BinaryMask* region = nullptr) {
  std::vector<double> k(11);
  double ks = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    k[i] = std::exp(-d * d / 4.5);
    ks += k[i];
  }
  for (double& v : k) v /= ks;
  const double c1 = 1e-4, c2 = 9e-4;
  const int64_t n = (int64_t)a.h * a.w;
  double acc = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < a.c; ++ch) {
    const double* pa = a.chw.data() + (size_t)ch * n;
    const double* pb = b.chw.data() + (size_t)ch * n;
    for (int i = 5; i < a.h - 5; ++i)
      for (int j = 5; j < a.w - 5; ++j) {
        if (region && !region->at(i, j)) continue;
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const double wgt = k[dy + 5] * k[dx + 5];
            const double va = pa[(size_t)(i + dy) * a.w + j + dx];
            const double vb = pb[(size_t)(i + dy) * a.w + j + dx];
            ma += wgt * va;
            mb += wgt * vb;
            maa += wgt * va * va;
            mbb += wgt * vb * vb;
            mab += wgt * va * vb;
          }
        const double sa = maa - ma * ma, sb = mbb - mb * mb,
                     sab = mab - ma * mb;
        acc += (2 * ma * mb + c1) * (2 * sab + c2) /
               ((ma * ma + mb * mb + c1) * (sa + sb + c2));
        ++count;
      }
  }
  REQUIRE(count > 0);
  return acc / (double)count;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("lab: neutral fixtures") {
  const Image white = const_img(3, 2, 2, 1.0, 1.0, 1.0);
  const Image lw = srgb_to_lab(white);
  CHECK(lw.at(0, 0, 0) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(std::abs(lw.at(1, 0, 0)) < 0.01);
  CHECK(std::abs(lw.at(2, 0, 0)) < 0.01);

  const Image black = const_img(3, 2, 2, 0.0, 0.0, 0.0);
  const Image lb = srgb_to_lab(black);
  CHECK(std::abs(lb.at(0, 1, 1)) < 1e-9);
  CHECK(std::abs(lb.at(1, 1, 1)) < 1e-9);
  CHECK(std::abs(lb.at(2, 1, 1)) < 1e-9);

  // the row-sum white point keeps grays neutral to rounding error
  for (double g : {0.1, 0.25, 0.5, 0.73, 0.9}) {
    const Image lg = srgb_to_lab(const_img(3, 1, 1, g, g, g));
    CHECK(std::abs(lg.at(1, 0, 0)) < 1e-10);
    CHECK(std::abs(lg.at(2, 0, 0)) < 1e-10);
  }
}

TEST_CASE("lab: lightness increases monotonically through gray") {
  double prev = -1.0;
  for (int s = 0; s <= 64; ++s) {
    const double g = s / 64.0;
    const Image lg = srgb_to_lab(const_img(3, 1, 1, g, g, g));
    CHECK(lg.at(0, 0, 0) > prev);
    prev = lg.at(0, 0, 0);
  }
  CHECK(prev == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("lab: primaries match published reference values") {
  // D65 2-degree reference Lab coordinates for the sRGB primaries
  struct Ref {
    double r, g, b, L, a, bb;
  };
  const Ref refs[] = {
      {1, 0, 0, 53.2408, 80.0925, 67.2032},
      {0, 1, 0, 87.7347, -86.1827, 83.1793},
      {0, 0, 1, 32.2970, 79.1875, -107.8602},
  };
  for (const Ref& e : refs) {
    const Image lab = srgb_to_lab(const_img(3, 1, 1, e.r, e.g, e.b));
    CHECK(std::abs(lab.at(0, 0, 0) - e.L) < 0.01);
    CHECK(std::abs(lab.at(1, 0, 0) - e.a) < 0.01);
    CHECK(std::abs(lab.at(2, 0, 0) - e.bb) < 0.01);
  }
}

TEST_CASE("lab: rejects non-rgb input") {
  CHECK_THROWS_AS(srgb_to_lab(Image(1, 4, 4)), UsageError);
}

TEST_CASE("psnr: caps, offset, and symmetry") {
  const Image a = rand_img(3, 16, 16, 7);
  CHECK(psnr(a, a) == 100.0);

  // tiny perturbation: true value far above 100 dB, still capped
  Image b = a;
  b.chw[5] += 1e-9;
  CHECK(psnr(a, b) == 100.0);

  const Image lo = const_img(3, 8, 8, 0.3, 0.3, 0.3);
  const Image hi = const_img(3, 8, 8, 0.4, 0.4, 0.4);
  CHECK(psnr(lo, hi) == doctest::Approx(20.0).epsilon(1e-6));

  const Image c = rand_img(3, 16, 16, 8);
  CHECK(psnr(a, c) == psnr(c, a));
}

TEST_CASE("psnr: region equals metric on the cropped region") {
  const int h = 16, w = 16;
  const Image a = rand_img(3, h, w, 21);
  const Image b = rand_img(3, h, w, 22);
  BinaryMask left(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w / 2; ++j) left.set(i, j, 1);

  Image ca(3, h, w / 2), cb(3, h, w / 2);
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w / 2; ++j) {
        ca.at(ch, i, j) = a.at(ch, i, j);
        cb.at(ch, i, j) = b.at(ch, i, j);
      }
  CHECK(std::abs(psnr(a, b, &left) - psnr(ca, cb)) < 1e-12);
}

TEST_CASE("psnr: usage errors") {
  const Image a = rand_img(3, 8, 8, 1);
  const BinaryMask empty(8, 8, 0);
  CHECK_THROWS_AS(psnr(a, a, &empty), UsageError);
  CHECK_THROWS_AS(psnr(a, rand_img(3, 8, 9, 2)), UsageError);
  const BinaryMask wrong(4, 4, 1);
  CHECK_THROWS_AS(psnr(a, a, &wrong), UsageError);
}

TEST_CASE("mse: shadow/non-shadow decomposition reassembles the total") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const int h = 13, w = 17;
    const Image a = rand_img(3, h, w, 100 + seed);
    const Image b = rand_img(3, h, w, 200 + seed);
    const BinaryMask m = rand_mask(h, w, 300 + seed);
    BinaryMask inv(h, w);
    int64_t ns = 0;
    for (size_t p = 0; p < m.bits.size(); ++p) {
      inv.bits[p] = m.bits[p] ? 0 : 1;
      ns += m.bits[p];
    }
    const int64_t nn = (int64_t)h * w - ns;
    const double whole = mse(a, b);
    const double parts =
        ((double)ns * mse(a, b, &m) + (double)nn * mse(a, b, &inv)) /
        (double)(ns + nn);
    CHECK(std::abs(whole - parts) < 1e-10);
  }
}

TEST_CASE("ssim: identity is exactly one, distortion is below one") {
  const Image a = rand_img(3, 20, 24, 42);
  CHECK(ssim(a, a) == 1.0);

  Image flipped = a;
  for (double& v : flipped.chw) v = 1.0 - v;
  CHECK(ssim(a, flipped) < 1.0);
  CHECK(ssim(a, flipped) == ssim(flipped, a));
}

TEST_CASE("ssim: more noise scores lower") {
  const Image a = rand_img(3, 24, 24, 5);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  Image small = a, big = a;
  for (size_t p = 0; p < a.chw.size(); ++p) {
    const double noise = g(rng);
    small.chw[p] += 0.02 * noise;
    big.chw[p] += 0.15 * noise;
  }
  const double s_small = ssim(a, small), s_big = ssim(a, big);
  CHECK(s_small > s_big);
  CHECK(s_small < 1.0);
  CHECK(s_big > 0.0);
}

TEST_CASE("ssim: separable filter agrees with the direct windowed form") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    const Image a = rand_img(3, 20, 24, 1000 + seed);
    const Image b = rand_img(3, 20, 24, 2000 + seed);
    CHECK(std::abs(ssim(a, b) - direct_ssim(a, b)) < 1e-4);

    const BinaryMask m = rand_mask(20, 24, 3000 + seed);
    CHECK(std::abs(ssim(a, b, &m) - direct_ssim(a, b, &m)) < 1e-4);
  }
}

TEST_CASE("ssim: single-center region matches that window's direct value") {
  const Image a = rand_img(1, 15, 15, 11);
  const Image b = rand_img(1, 15, 15, 12);
  BinaryMask one(15, 15);
  one.set(7, 7, 1);
  CHECK(std::abs(ssim(a, b, &one) - direct_ssim(a, b, &one)) < 1e-4);
}

TEST_CASE("ssim: usage errors") {
  CHECK_THROWS_AS(ssim(Image(3, 10, 11), Image(3, 10, 11)), UsageError);
  CHECK_THROWS_AS(ssim(Image(3, 11, 10), Image(3, 11, 10)), UsageError);

  // nonempty region whose pixels all sit too close to the border
  const Image a = rand_img(3, 16, 16, 3);
  BinaryMask corner(16, 16);
  corner.set(0, 0, 1);
  corner.set(1, 2, 1);
  CHECK_THROWS_AS(ssim(a, a, &corner), UsageError);
}

TEST_CASE("rmae: identity, symmetry, and unit lightness step") {
  const Image a = rand_img(3, 9, 9, 1);
  CHECK(rmae_lab(a, a) == 0.0);
  const Image b = rand_img(3, 9, 9, 2);
  CHECK(rmae_lab(a, b) == rmae_lab(b, a));
  CHECK(rmae_lab(a, b) > 0.0);

  // grays one L unit apart differ only in lightness -> mean over the three
  // Lab channels is exactly 1/3
  const double g40 = gray_for_lightness(40.0);
  const double g41 = gray_for_lightness(41.0);
  const Image la = const_img(3, 6, 6, g40, g40, g40);
  const Image lb = const_img(3, 6, 6, g41, g41, g41);
  CHECK(rmae_lab(la, lb) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("rmae: single-pixel region") {
  const Image a = rand_img(3, 7, 7, 31);
  const Image b = rand_img(3, 7, 7, 32);
  BinaryMask one(7, 7);
  one.set(3, 4, 1);
  const Image la = srgb_to_lab(a), lb = srgb_to_lab(b);
  double expect = 0.0;
  for (int ch = 0; ch < 3; ++ch)
    expect += std::abs(la.at(ch, 3, 4) - lb.at(ch, 3, 4));
  CHECK(rmae_lab(a, b, &one) == doctest::Approx(expect / 3.0).epsilon(1e-12));
}

TEST_CASE("rmae: usage errors") {
  const Image a = rand_img(3, 6, 6, 1);
  const BinaryMask empty(6, 6, 0);
  CHECK_THROWS_AS(rmae_lab(a, a, &empty), UsageError);
  CHECK_THROWS_AS(rmae_lab(Image(1, 6, 6), Image(1, 6, 6)), UsageError);
}

TEST_CASE("evaluate_pair: regions, counts, and flags") {
  const int h = 16, w = 16;
  const Image restored = rand_img(3, h, w, 51);
  const Image target = rand_img(3, h, w, 52);
  BinaryMask m(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) m.set(i, j, i < h / 2 ? 1 : 0);

  const MetricReport rep = evaluate_pair(restored, target, m);
  CHECK(rep.has_shadow);
  CHECK(rep.has_non_shadow);
  CHECK(rep.shadow_pixels == (int64_t)h * w / 2);
  CHECK(rep.shadow_pixels + rep.non_shadow_pixels == (int64_t)h * w);
  CHECK(rep.all.psnr == psnr(restored, target));
  CHECK(rep.shadow.psnr == psnr(restored, target, &m));
  CHECK(rep.all.ssim == ssim(restored, target));
  CHECK(rep.all.rmae == rmae_lab(restored, target));
  CHECK(std::isfinite(rep.non_shadow.ssim));

  // all-shadow mask: the non-shadow side is absent
  const BinaryMask full(h, w, 1);
  const MetricReport rep2 = evaluate_pair(restored, target, full);
  CHECK(rep2.has_shadow);
  CHECK_FALSE(rep2.has_non_shadow);
  CHECK(rep2.non_shadow_pixels == 0);

  // shadow confined to the border: PSNR/RMAE defined, SSIM is not
  BinaryMask border(h, w);
  for (int j = 0; j < w; ++j) border.set(0, j, 1);
  const MetricReport rep3 = evaluate_pair(restored, target, border);
  CHECK(rep3.has_shadow);
  CHECK(std::isfinite(rep3.shadow.psnr));
  CHECK(std::isfinite(rep3.shadow.rmae));
  CHECK(std::isnan(rep3.shadow.ssim));
}

}  // TEST_SUITE
