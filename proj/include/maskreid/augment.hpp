#pragma once

#include <string>

#include "maskreid/image.hpp"
#include "maskreid/mask.hpp"
#include "maskreid/rng.hpp"

namespace maskreid {

/// Separable Gaussian convolution, kernel radius ceil(3*sigma),
/// clamp-to-edge borders. sigma must be > 0.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

struct JitterStrengths {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;  // fraction of the hue circle

  void validate() const;
};

/// Multiplies brightness/contrast/saturation by factors uniform in
/// [1-s, 1+s] and rotates hue uniformly in [-s_hue, s_hue] turns.
ImageBuffer color_jitter(const ImageBuffer& img, const JitterStrengths& s, Rng& rng);

/// Pixels with intensity >= threshold are inverted channel-wise.
ImageBuffer solarize(const ImageBuffer& img, double threshold);

struct RandomErasingParams {
  double area_lo = 0.02;
  double area_hi = 0.4;
  double aspect_lo = 0.3;
  double aspect_hi = 10.0 / 3.0;
  int attempts = 10;
};

/// One zero-filled rectangle with area fraction uniform in [area_lo, area_hi].
ImageBuffer random_erasing(const ImageBuffer& img, const RandomErasingParams& p, Rng& rng);

struct NormalAugConfig {
  double flip_p = 0.5;
  int pad = 10;  // zero-pad margin before cropping back to the input size
  double erase_p = 0.5;
  RandomErasingParams erasing;
};

/// Supervised-branch augmentation: horizontal flip, pad-then-random-crop,
/// random erasing.
ImageBuffer normal_pipeline(const ImageBuffer& img, const NormalAugConfig& cfg, Rng& rng);

struct StrongAugConfig {
  MaskSpec mask;  // applied unconditionally; ratio 0 degenerates to identity
  double jitter_p = 0.8;
  JitterStrengths jitter;
  double blur_p = 0.5;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double solarize_p = 0.2;
  double solarize_threshold = 0.5;

  void validate(int image_height, int image_width) const;
};

struct StrongAugResult {
  ImageBuffer image;
  BinaryMask mask;
};

/// Contrastive-branch augmentation: color jitter, Gaussian blur, solarize,
/// then the random rectangle mask.
StrongAugResult strong_pipeline(const ImageBuffer& img, const StrongAugConfig& cfg,
                                Rng& rng);

enum class OccluderKind { random_erasing, cutout, hide_and_seek };

/// Parses "random_erasing" | "cutout" | "hide_and_seek"; throws on unknown.
OccluderKind parse_occluder_kind(const std::string& name);

struct OccluderParams {
  RandomErasingParams erasing;
  int cutout_size = -1;   // side of the zeroed square; -1 = min(h,w)/2
  int hide_grid = 4;      // grid is hide_grid x hide_grid cells
  double hide_p = 0.5;    // per-cell hide probability
};

/// Reference occluders for the augmentation comparison harness.
ImageBuffer baseline_occluder(const ImageBuffer& img, OccluderKind kind,
                              const OccluderParams& p, Rng& rng);

}  // namespace maskreid
