#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "maskreid/augment.hpp"

using namespace maskreid;

namespace {
ImageBuffer random_image(int h, int w, std::uint64_t seed) {
  ImageBuffer img(h, w);
  Rng rng = make_rng(seed);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data()[i] = static_cast<float>(uniform_real(rng, 0.0, 1.0));
  return img;
}

double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}
}  // namespace

TEST_CASE("gaussian blur keeps constants and normalizes the kernel") {
  ImageBuffer flat(16, 16, 0.37f);
  CHECK(max_abs_diff(gaussian_blur(flat, 1.0), flat) < 1e-6);

  // impulse response: center value equals the squared 1-D kernel peak,
  // recomputed here from the definition
  const double sigma = 1.0;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  double sum = 0.0, peak = 1.0;
  for (int i = -radius; i <= radius; ++i)
    sum += std::exp(-0.5 * i * i / (sigma * sigma));
  peak /= sum;
  ImageBuffer impulse(17, 17);
  impulse.at(8, 8, 0) = impulse.at(8, 8, 1) = impulse.at(8, 8, 2) = 1.0f;
  const ImageBuffer blurred = gaussian_blur(impulse, sigma);
  CHECK(blurred.at(8, 8, 0) ==
        doctest::Approx(static_cast<float>(peak * peak)).epsilon(1e-5));

  // sigma -> 0 degenerates to identity
  const ImageBuffer img = random_image(16, 16, 3);
  CHECK(max_abs_diff(gaussian_blur(img, 0.01), img) < 1e-3);

  CHECK_THROWS_AS((void)gaussian_blur(img, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)gaussian_blur(img, -1.0), std::invalid_argument);
}

TEST_CASE("color jitter identity and brightness semantics") {
  const ImageBuffer img = random_image(12, 10, 11);
  JitterStrengths off;
  off.brightness = off.contrast = off.saturation = off.hue = 0.0;
  Rng rng = make_rng(4);
  CHECK(color_jitter(img, off, rng) == img);  // bit-identical

  // brightness-only: every unclamped pixel scales by one common factor
  JitterStrengths bright;
  bright.brightness = 1.0;
  bright.contrast = bright.saturation = bright.hue = 0.0;
  ImageBuffer half(6, 6, 0.25f);
  Rng rng2 = make_rng(9);
  const ImageBuffer out = color_jitter(half, bright, rng2);
  const float factor = out.at(0, 0, 0) / 0.25f;
  CHECK(factor >= 0.0f);
  CHECK(factor <= 2.0f);
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(0.25f * factor).epsilon(1e-6));

  // determinism
  Rng a = make_rng(21), b = make_rng(21);
  JitterStrengths s;  // defaults
  CHECK(color_jitter(img, s, a) == color_jitter(img, s, b));
}

TEST_CASE("solarize thresholds") {
  ImageBuffer img(2, 2);
  const float vals[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) img.at(i / 2, i % 2, c) = vals[i];

  const ImageBuffer full = solarize(img, 0.0);
  for (int i = 0; i < 4; ++i) CHECK(full.at(i / 2, i % 2, 0) == 1.0f - vals[i]);

  const ImageBuffer mid = solarize(img, 0.5);
  CHECK(mid.at(0, 0, 0) == 0.0f);
  CHECK(mid.at(0, 1, 0) == 0.25f);
  CHECK(mid.at(1, 0, 0) == 0.25f);  // 0.75 inverted
  CHECK(mid.at(1, 1, 0) == 0.0f);   // 1.0 inverted

  const ImageBuffer top = solarize(img, 1.0);
  CHECK(top.at(1, 0, 0) == 0.75f);  // below threshold, untouched
  CHECK(top.at(1, 1, 0) == 0.0f);   // exactly 1.0 inverts
}

TEST_CASE("normal pipeline identity, involution and determinism") {
  const ImageBuffer img = random_image(32, 16, 8);
  NormalAugConfig off;
  off.flip_p = 0.0;
  off.erase_p = 0.0;
  off.pad = 0;
  Rng rng = make_rng(1);
  CHECK(normal_pipeline(img, off, rng) == img);

  CHECK(horizontal_flip(horizontal_flip(img)) == img);

  NormalAugConfig cfg;  // defaults
  Rng a = make_rng(33), b = make_rng(33);
  CHECK(normal_pipeline(img, cfg, a) == normal_pipeline(img, cfg, b));
}

TEST_CASE("strong pipeline mask budget and shape") {
  const ImageBuffer img = random_image(256, 128, 15);
  StrongAugConfig cfg;  // defaults: r=0.5, M=(128,128)

  StrongAugConfig off = cfg;
  off.jitter_p = off.blur_p = off.solarize_p = 0.0;
  off.mask.ratio = 0.0;
  Rng rng0 = make_rng(2);
  const StrongAugResult idres = strong_pipeline(img, off, rng0);
  CHECK(idres.image == img);
  CHECK(idres.mask.rects.empty());

  Rng rng = make_rng(1234);
  const StrongAugResult res = strong_pipeline(img, cfg, rng);
  CHECK(res.image.height() == img.height());
  CHECK(res.image.width() == img.width());
  CHECK(res.mask.fraction() >= 0.48);
  CHECK(res.mask.fraction() <= 0.5 + 1.0 / (256.0 * 128.0));
  for (std::size_t i = 0; i < res.image.size(); ++i) {
    CHECK(res.image.data()[i] >= 0.0f);
    CHECK(res.image.data()[i] <= 1.0f);
  }
  CHECK(res.image.all_finite());

  Rng a = make_rng(77), b = make_rng(77);
  CHECK(strong_pipeline(img, cfg, a).image == strong_pipeline(img, cfg, b).image);
}

TEST_CASE("baseline occluders") {
  const ImageBuffer img = random_image(64, 64, 19);
  OccluderParams params;

  SUBCASE("hide-and-seek expected hidden fraction") {
    double total = 0.0;
    const int trials = 10000;
    Rng rng = make_rng(5);
    for (int t = 0; t < trials; ++t) {
      const ImageBuffer out = baseline_occluder(img, OccluderKind::hide_and_seek,
                                                params, rng);
      int hidden = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (out.at(y, x, 0) == 0.0f && out.at(y, x, 1) == 0.0f &&
              out.at(y, x, 2) == 0.0f)
            ++hidden;
      total += hidden / 4096.0;
    }
    CHECK(total / trials == doctest::Approx(0.5).epsilon(0.02));
  }

  SUBCASE("cutout bounds and degenerate size") {
    OccluderParams zero = params;
    zero.cutout_size = 0;
    Rng rng = make_rng(3);
    CHECK(baseline_occluder(img, OccluderKind::cutout, zero, rng) == img);

    OccluderParams sized = params;
    sized.cutout_size = 24;
    for (int t = 0; t < 500; ++t) {
      const ImageBuffer out = baseline_occluder(img, OccluderKind::cutout, sized, rng);
      // all zeroed pixels fall inside one fully-in-bounds 24x24 square
      int min_y = 64, max_y = -1, min_x = 64, max_x = -1;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (out.at(y, x, 0) == 0.0f && img.at(y, x, 0) != 0.0f) {
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
          }
      CHECK(max_y - min_y + 1 <= 24);
      CHECK(max_x - min_x + 1 <= 24);
      CHECK(min_y >= 0);
      CHECK(max_y <= 63);
    }
  }

  SUBCASE("unknown kind rejected at parse") {
    CHECK_THROWS_AS((void)parse_occluder_kind("cutmix"), std::invalid_argument);
    CHECK(parse_occluder_kind("hide_and_seek") == OccluderKind::hide_and_seek);
  }
}
