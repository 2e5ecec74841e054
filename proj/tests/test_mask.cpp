#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "maskreid/mask.hpp"

using namespace maskreid;

namespace {
long long popcount(const BinaryMask& m) {
  long long n = 0;
  for (auto b : m.bits) n += b;
  return n;
}
}  // namespace

TEST_CASE("ratio zero yields an empty mask") {
  MaskSpec spec;
  spec.ratio = 0.0;
  spec.max_height = 4;
  spec.max_width = 4;
  Rng rng = make_rng(1);
  const BinaryMask m = random_rectangle_mask(4, 4, spec, rng);
  CHECK(m.rects.empty());
  CHECK(popcount(m) == 0);
  CHECK(m.placements == 0);
  CHECK(!m.shortfall);
}

TEST_CASE("4x4 exhaustive seed sweep hits the target band") {
  MaskSpec spec;
  spec.ratio = 0.5;
  spec.max_height = 4;
  spec.max_width = 4;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    Rng rng = make_rng(seed);
    const BinaryMask m = random_rectangle_mask(4, 4, spec, rng);
    const long long area = popcount(m);
    CHECK(area <= 8);
    CHECK(area >= static_cast<long long>(std::ceil(8.0 * (1.0 - spec.area_tolerance))));
    CHECK(m.placements <= spec.max_attempts);
    CHECK(!m.shortfall);
  }
}

TEST_CASE("deterministic at full scale") {
  MaskSpec spec;  // defaults: r=0.5, M=(128,128)
  Rng a = make_rng(0), b = make_rng(0);
  const BinaryMask m1 = random_rectangle_mask(256, 128, spec, a);
  const BinaryMask m2 = random_rectangle_mask(256, 128, spec, b);
  CHECK(m1.bits == m2.bits);
  CHECK(m1.rects.size() == m2.rects.size());
  CHECK(m1.area == m2.area);
}

TEST_CASE("mask invariants over random specs") {
  Rng meta = make_rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = uniform_int(meta, 8, 64);
    const int w = uniform_int(meta, 8, 64);
    MaskSpec spec;
    spec.ratio = uniform_real(meta, 0.0, 0.9);
    spec.max_height = uniform_int(meta, 1, h);
    spec.max_width = uniform_int(meta, 1, w);
    Rng rng = make_rng(1000 + trial);
    const BinaryMask m = random_rectangle_mask(h, w, spec, rng);

    const double fraction = m.fraction();
    CHECK(fraction <= spec.ratio + 1.0 / (static_cast<double>(h) * w) + 1e-12);
    if (!m.shortfall)
      CHECK(fraction >= spec.ratio * (1.0 - spec.area_tolerance) - 1e-12);

    // every rect in bounds and within the size cap
    std::vector<std::uint8_t> rebuilt(static_cast<std::size_t>(h) * w, 0);
    for (const MaskRect& r : m.rects) {
      CHECK(r.height >= 1);
      CHECK(r.width >= 1);
      CHECK(r.height <= spec.max_height);
      CHECK(r.width <= spec.max_width);
      CHECK(r.top >= 0);
      CHECK(r.left >= 0);
      CHECK(r.top + r.height <= h);
      CHECK(r.left + r.width <= w);
      for (int y = r.top; y < r.top + r.height; ++y)
        for (int x = r.left; x < r.left + r.width; ++x)
          rebuilt[static_cast<std::size_t>(y) * w + x] = 1;
    }
    CHECK(rebuilt == m.bits);  // bits are exactly the union of the rect list

    CHECK(popcount(m) == m.area);
    CHECK(m.placements <= spec.max_attempts);
  }
}

TEST_CASE("apply_mask polarity and partition") {
  ImageBuffer img(4, 4);
  Rng rng = make_rng(5);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(uniform_real(rng, 0.05, 1.0));

  BinaryMask none;
  none.height = 4;
  none.width = 4;
  none.bits.assign(16, 0);
  CHECK(apply_mask(img, none) == img);

  BinaryMask all = none;
  all.bits.assign(16, 1);
  const ImageBuffer dark = apply_mask(img, all);
  for (std::size_t i = 0; i < dark.size(); ++i) CHECK(dark.data()[i] == 0.0f);

  BinaryMask corner = none;
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) corner.bits[static_cast<std::size_t>(y) * 4 + x] = 1;
  const ImageBuffer out = apply_mask(img, corner);
  int zeroed = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const bool masked = y < 2 && x < 2;
      if (masked) {
        ++zeroed;
        for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == 0.0f);
      } else {
        for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == img.at(y, x, c));
      }
    }
  CHECK(zeroed == 4);

  BinaryMask wrong;
  wrong.height = 2;
  wrong.width = 2;
  wrong.bits.assign(4, 0);
  CHECK_THROWS_AS((void)apply_mask(img, wrong), std::invalid_argument);
}

TEST_CASE("spec validation") {
  MaskSpec spec;
  spec.ratio = 1.0;
  CHECK_THROWS_AS(spec.validate(32, 32), std::invalid_argument);
  spec.ratio = 0.5;
  spec.max_height = 200;
  CHECK_THROWS_AS(spec.validate(32, 32), std::invalid_argument);
}
