#pragma once

// Image-quality metrics with whole-image / shadow / non-shadow variants:
// PSNR in RGB, SSIM with an 11x11 Gaussian window, and mean absolute error
// in CIELAB. Region masks restrict which pixels (for PSNR/MAE) or window
// centers (for SSIM) contribute.

#include <optional>
#include <string>
#include <vector>

#include "shadowmamba/image_io.hpp"
#include "shadowmamba/mask.hpp"

namespace sm {

// sRGB in [0,1] -> CIELAB (D65 white). The white point is taken as the
// matrix row sums, so neutral grays map to a = b = 0 up to rounding error.
Image srgb_to_lab(const Image& img);

// Mean squared error over region pixels, all channels. region == nullptr
// means the whole image; a region with no pixels is a usage error.
double mse(const Image& a, const Image& b, const BinaryMask* region = nullptr);

// 10*log10(1/MSE), capped at 100 dB (identical images would be infinite).
double psnr(const Image& a, const Image& b,
            const BinaryMask* region = nullptr);

// Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, L 1)
// over window centers fully inside the image; a region restricts the centers.
// Channels are averaged. Images smaller than the window are a usage error.
double ssim(const Image& a, const Image& b,
            const BinaryMask* region = nullptr);

// Mean |Lab(a) - Lab(b)| over region pixels and the three Lab channels.
double rmae_lab(const Image& a, const Image& b,
                const BinaryMask* region = nullptr);

struct MetricTriple {
  double psnr = 0.0;
  double ssim = 0.0;
  double rmae = 0.0;
};

struct MetricReport {
  MetricTriple all, shadow, non_shadow;
  int64_t shadow_pixels = 0;
  int64_t non_shadow_pixels = 0;
  bool has_shadow = false;      // false when the mask is empty
  bool has_non_shadow = false;  // false when the mask covers everything
};

// Full report for one image pair: ALL always, S/NS where the mask region is
// nonempty (SSIM additionally needs at least one valid window center).
MetricReport evaluate_pair(const Image& restored, const Image& target,
                           const BinaryMask& mask);

}  // namespace sm
