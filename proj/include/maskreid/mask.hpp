#pragma once

#include <cstdint>
#include <vector>

#include "maskreid/image.hpp"
#include "maskreid/rng.hpp"

namespace maskreid {

/// Parameters of the random rectangle mask generator.
struct MaskSpec {
  double ratio = 0.5;        // target masked fraction r in [0,1)
  int max_height = 128;      // maximum rectangle height m_h
  int max_width = 128;       // maximum rectangle width m_w
  int max_attempts = 100;    // placement cap, guarantees termination
  double area_tolerance = 0.02;  // accept area_current >= target*(1-tol)

  void validate(int image_height, int image_width) const;
};

struct MaskRect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

/// Union-of-rectangles occlusion mask.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // 1 = occluded
  std::vector<MaskRect> rects;     // placed rectangles, in placement order
  long long area = 0;              // popcount(bits)
  int placements = 0;
  bool shortfall = false;  // terminated by max_attempts below target band

  bool at(int y, int x) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  double fraction() const {
    return height * width == 0
               ? 0.0
               : static_cast<double>(area) / (static_cast<double>(height) * width);
  }
};

/// Draws rectangles with dims uniform in [1, m_h] x [1, m_w] and top-left
/// uniform over valid positions, unioning them into the mask. A candidate
/// that would push the union past ratio*h*w is shrunk by
/// sqrt(area_remaining / rect_area) with floor rounding (minimum 1x1) and
/// placed at the same corner. Stops once the union reaches
/// ratio*h*w*(1 - area_tolerance), or flags a shortfall at max_attempts.
BinaryMask random_rectangle_mask(int height, int width, const MaskSpec& spec, Rng& rng);

/// Zeroes masked pixels in all channels; unmasked pixels pass through
/// bit-identical.
ImageBuffer apply_mask(const ImageBuffer& img, const BinaryMask& mask);

}  // namespace maskreid
