#pragma once

// Procedural fixtures: toy shadow-removal triplets (smooth textured
// background, polygonal multiplicative shadows, exact masks) and mask
// denoising fixtures (rectangular blobs plus isolated far-away noise).

#include <cstdint>
#include <vector>

#include "shadowmamba/image_io.hpp"
#include "shadowmamba/mask.hpp"

namespace sm {

struct ToyTriplet {
  Image shadowed;   // target with shadows applied
  Image target;     // shadow-free ground truth
  BinaryMask mask;  // exactly the attenuated pixels
};

// One sample: textured background, 1..max_polygons disjoint convex polygon
// shadows, each darkened by a multiplicative factor drawn from [0.3, 0.7].
// Requires h, w >= 16.
ToyTriplet make_toy_triplet(int h, int w, uint64_t seed, int max_polygons = 2);

std::vector<ToyTriplet> make_toy_dataset(int count, int h, int w,
                                         uint64_t seed, int max_polygons = 2);

struct DenoiseFixture {
  BinaryMask noisy;  // clean plus isolated noise pixels
  BinaryMask clean;  // rectangular blobs only, each >= 15x15
  int noise_count = 0;
  int blob_count = 0;
};

// Blobs are mutually separated and noise pixels sit strictly outside the
// reach of the rough-region dilation, so denoising must reproduce `clean`
// bit-exactly. Requires h, w >= 48.
DenoiseFixture make_denoise_fixture(int h, int w, uint64_t seed,
                                    int max_noise = 30,
                                    int rough_dilate_radius = 5);

}  // namespace sm
