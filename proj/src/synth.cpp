#include "shadowmamba/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "shadowmamba/tensor.hpp"  // UsageError

namespace sm {
namespace {

// Smooth background: per-channel base tone plus a few shared low-frequency
// sinusoids with per-channel gains. Values stay well inside (0,1) so the
// multiplicative shadow keeps a visible gap everywhere.
Image make_background(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(3, h, w);
  const int waves = 3;
  double fx[waves], fy[waves], ph[waves], gain[3][waves], base[3];
  for (int k = 0; k < waves; ++k) {
    fx[k] = (0.5 + 2.5 * u(rng)) * 2.0 * M_PI / w;
    fy[k] = (0.5 + 2.5 * u(rng)) * 2.0 * M_PI / h;
    ph[k] = 2.0 * M_PI * u(rng);
  }
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.45 + 0.3 * u(rng);
    for (int k = 0; k < waves; ++k)
      gain[c][k] = 0.18 * (0.2 + 0.8 * u(rng)) / waves;
  }
  const int64_t n = (int64_t)h * w;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s[waves];
      for (int k = 0; k < waves; ++k)
        s[k] = std::sin(fx[k] * j + fy[k] * i + ph[k]);
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (int k = 0; k < waves; ++k) v += gain[c][k] * s[k];
        img.chw[(size_t)c * n + (size_t)i * w + j] =
            std::clamp(v, 0.05, 0.95);
      }
    }
  return img;
}

struct Polygon {
  std::vector<double> px, py;  // counter-clockwise
};

Polygon random_polygon(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> nv(4, 7);
  const double rmax = 0.22 * std::min(h, w);
  const double rmin = 0.12 * std::min(h, w);
  const double cx = rmax + u(rng) * (w - 2.0 * rmax);
  const double cy = rmax + u(rng) * (h - 2.0 * rmax);
  const int n = nv(rng);
  std::vector<double> ang(n);
  for (double& a : ang) a = 2.0 * M_PI * u(rng);
  std::sort(ang.begin(), ang.end());
  Polygon poly;
  for (int k = 0; k < n; ++k) {
    const double r = rmin + u(rng) * (rmax - rmin);
    poly.px.push_back(cx + r * std::cos(ang[k]));
    poly.py.push_back(cy + r * std::sin(ang[k]));
  }
  return poly;
}

// Convex containment: pixel center on the inner side of every edge. Vertices
// are angle-sorted around the centroid, so the winding is consistent.
bool inside(const Polygon& p, double x, double y) {
  const int n = (int)p.px.size();
  int sign = 0;
  for (int k = 0; k < n; ++k) {
    const int k2 = (k + 1) % n;
    const double cross = (p.px[k2] - p.px[k]) * (y - p.py[k]) -
                         (p.py[k2] - p.py[k]) * (x - p.px[k]);
    if (cross == 0.0) continue;
    const int s = cross > 0.0 ? 1 : -1;
    if (sign == 0)
      sign = s;
    else if (s != sign)
      return false;
  }
  return true;
}

BinaryMask rasterize(const Polygon& p, int h, int w) {
  BinaryMask m(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (inside(p, j + 0.5, i + 0.5)) m.set(i, j, 1);
  return m;
}

bool overlaps(const BinaryMask& a, const BinaryMask& b, int margin) {
  // true if any set pixel of a is within Chebyshev `margin` of a set pixel
  // of b; margin 0 tests plain intersection
  for (int i = 0; i < a.h; ++i)
    for (int j = 0; j < a.w; ++j) {
      if (!a.at(i, j)) continue;
      const int i0 = std::max(0, i - margin), i1 = std::min(a.h - 1, i + margin);
      const int j0 = std::max(0, j - margin), j1 = std::min(a.w - 1, j + margin);
      for (int y = i0; y <= i1; ++y)
        for (int x = j0; x <= j1; ++x)
          if (b.at(y, x)) return true;
    }
  return false;
}

}  // namespace

ToyTriplet make_toy_triplet(int h, int w, uint64_t seed, int max_polygons) {
  if (h < 16 || w < 16)
    throw UsageError("make_toy_triplet: image must be at least 16x16");
  if (max_polygons < 1)
    throw UsageError("make_toy_triplet: max_polygons must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  ToyTriplet t;
  t.target = make_background(h, w, rng);
  t.shadowed = t.target;
  t.mask = BinaryMask(h, w);

  std::uniform_int_distribution<int> np(1, max_polygons);
  const int want = np(rng);
  const int64_t n = (int64_t)h * w;
  int placed = 0;
  for (int attempt = 0; attempt < 40 && placed < want; ++attempt) {
    const Polygon poly = random_polygon(h, w, rng);
    const BinaryMask piece = rasterize(poly, h, w);
    int64_t area = 0;
    for (uint8_t v : piece.bits) area += v;
    if (area < 16) continue;                      // degenerate sliver
    if (overlaps(piece, t.mask, 2)) continue;     // keep shadows disjoint
    const double att = 0.3 + 0.4 * u(rng);
    for (int64_t p = 0; p < n; ++p) {
      if (!piece.bits[p]) continue;
      t.mask.bits[p] = 1;
      for (int c = 0; c < 3; ++c) t.shadowed.chw[c * n + p] *= att;
    }
    ++placed;
  }
  if (placed == 0) {
    // fall back to a centered square so every seed yields a usable sample
    const int s = std::min(h, w) / 3;
    const int i0 = (h - s) / 2, j0 = (w - s) / 2;
    const double att = 0.5;
    for (int i = i0; i < i0 + s; ++i)
      for (int j = j0; j < j0 + s; ++j) {
        t.mask.set(i, j, 1);
        for (int c = 0; c < 3; ++c)
          t.shadowed.chw[(size_t)c * n + (size_t)i * w + j] *= att;
      }
  }
  return t;
}

std::vector<ToyTriplet> make_toy_dataset(int count, int h, int w,
                                         uint64_t seed, int max_polygons) {
  std::vector<ToyTriplet> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(make_toy_triplet(h, w, seed + 1000003ULL * i, max_polygons));
  return out;
}

DenoiseFixture make_denoise_fixture(int h, int w, uint64_t seed, int max_noise,
                                    int rough_dilate_radius) {
  if (h < 48 || w < 48)
    throw UsageError("make_denoise_fixture: image must be at least 48x48");
  if (max_noise < 0 || rough_dilate_radius < 0)
    throw UsageError("make_denoise_fixture: negative parameter");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  DenoiseFixture fx;
  fx.clean = BinaryMask(h, w);

  // rectangular blobs: morphologically stable under 3x3 opening/closing as
  // long as they stay Chebyshev-separated from one another
  std::uniform_int_distribution<int> nblobs(1, 3);
  const int want = nblobs(rng);
  std::vector<std::array<int, 4>> rects;  // i0, j0, bh, bw
  for (int attempt = 0; attempt < 60 && (int)rects.size() < want; ++attempt) {
    const int bh = 15 + (int)(u(rng) * 11);
    const int bw = 15 + (int)(u(rng) * 11);
    if (bh > h || bw > w) continue;
    const int i0 = (int)(u(rng) * (h - bh + 1));
    const int j0 = (int)(u(rng) * (w - bw + 1));
    bool clash = false;
    for (const auto& r : rects) {
      const bool sep_i = i0 > r[0] + r[2] + 3 || r[0] > i0 + bh + 3;
      const bool sep_j = j0 > r[1] + r[3] + 3 || r[1] > j0 + bw + 3;
      if (!sep_i && !sep_j) {
        clash = true;
        break;
      }
    }
    if (clash) continue;
    rects.push_back({i0, j0, bh, bw});
    for (int i = i0; i < i0 + bh; ++i)
      for (int j = j0; j < j0 + bw; ++j) fx.clean.set(i, j, 1);
  }
  fx.blob_count = (int)rects.size();
  fx.noisy = fx.clean;

  // isolated noise: strictly beyond the dilation reach of any blob pixel and
  // mutually non-adjacent, so opening alone deletes each one
  const int keepout = rough_dilate_radius + 2;
  std::uniform_int_distribution<int> ri(0, h - 1), rj(0, w - 1);
  std::vector<std::pair<int, int>> noise;
  std::uniform_int_distribution<int> nn(1, std::max(1, max_noise));
  const int want_noise = max_noise == 0 ? 0 : nn(rng);
  for (int attempt = 0; attempt < 4000 && (int)noise.size() < want_noise;
       ++attempt) {
    const int i = ri(rng), j = rj(rng);
    bool ok = true;
    for (const auto& r : rects) {
      const int di = std::max({r[0] - i, i - (r[0] + r[2] - 1), 0});
      const int dj = std::max({r[1] - j, j - (r[1] + r[3] - 1), 0});
      if (std::max(di, dj) <= keepout) {
        ok = false;
        break;
      }
    }
    if (ok)
      for (const auto& p : noise)
        if (std::max(std::abs(p.first - i), std::abs(p.second - j)) <= 2) {
          ok = false;
          break;
        }
    if (!ok) continue;
    noise.emplace_back(i, j);
    fx.noisy.set(i, j, 1);
  }
  fx.noise_count = (int)noise.size();
  return fx;
}

}  // namespace sm
