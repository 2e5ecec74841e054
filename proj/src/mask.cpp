#include "maskreid/mask.hpp"

#include <cmath>
#include <stdexcept>

namespace maskreid {

void MaskSpec::validate(int image_height, int image_width) const {
  if (ratio < 0.0 || ratio >= 1.0)
    throw std::invalid_argument("MaskSpec: ratio must be in [0,1)");
  if (max_height < 1 || max_height > image_height || max_width < 1 ||
      max_width > image_width)
    throw std::invalid_argument("MaskSpec: max size must satisfy 1 <= m <= image size");
  if (max_attempts < 1) throw std::invalid_argument("MaskSpec: max_attempts must be >= 1");
  if (area_tolerance < 0.0 || area_tolerance >= 1.0)
    throw std::invalid_argument("MaskSpec: area_tolerance must be in [0,1)");
}

namespace {

/// Counts the not-yet-masked cells of the rectangle; sets them when commit.
long long union_rect(std::vector<std::uint8_t>& bits, int mask_width, const MaskRect& r,
                     bool commit) {
  long long fresh = 0;
  for (int y = r.top; y < r.top + r.height; ++y) {
    std::uint8_t* row = bits.data() + static_cast<std::size_t>(y) * mask_width;
    for (int x = r.left; x < r.left + r.width; ++x) {
      if (!row[x]) {
        ++fresh;
        if (commit) row[x] = 1;
      }
    }
  }
  return fresh;
}

}  // namespace

BinaryMask random_rectangle_mask(int height, int width, const MaskSpec& spec, Rng& rng) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("random_rectangle_mask: bad image size");
  spec.validate(height, width);

  BinaryMask mask;
  mask.height = height;
  mask.width = width;
  mask.bits.assign(static_cast<std::size_t>(height) * width, 0);

  const double target_area = spec.ratio * height * width;
  const double accept_area = target_area * (1.0 - spec.area_tolerance);
  long long current = 0;

  while (static_cast<double>(current) < accept_area &&
         mask.placements < spec.max_attempts) {
    ++mask.placements;
    MaskRect rect;
    rect.height = uniform_int(rng, 1, spec.max_height);
    rect.width = uniform_int(rng, 1, spec.max_width);
    rect.top = uniform_int(rng, 0, height - rect.height);
    rect.left = uniform_int(rng, 0, width - rect.width);

    const long long fresh = union_rect(mask.bits, width, rect, false);
    if (static_cast<double>(current + fresh) <= target_area) {
      union_rect(mask.bits, width, rect, true);
      current += fresh;
      mask.rects.push_back(rect);
    } else {
      // Shrink so the rectangle alone cannot exceed the remaining budget.
      const double remain = target_area - static_cast<double>(current);
      const double factor =
          std::sqrt(remain / (static_cast<double>(rect.height) * rect.width));
      rect.height = std::max(1, static_cast<int>(std::floor(rect.height * factor)));
      rect.width = std::max(1, static_cast<int>(std::floor(rect.width * factor)));
      // When flooring collapsed one dimension to the 1-pixel minimum the
      // other must refit the budget, or the overshoot can exceed a pixel.
      if (static_cast<double>(rect.height) * rect.width > remain) {
        if (rect.height == 1)
          rect.width = std::max(1, static_cast<int>(std::floor(remain)));
        else if (rect.width == 1)
          rect.height = std::max(1, static_cast<int>(std::floor(remain)));
      }
      current += union_rect(mask.bits, width, rect, true);
      mask.rects.push_back(rect);
    }
  }

  mask.area = current;
  mask.shortfall = static_cast<double>(current) < accept_area;
  return mask;
}

ImageBuffer apply_mask(const ImageBuffer& img, const BinaryMask& mask) {
  if (img.height() != mask.height || img.width() != mask.width)
    throw std::invalid_argument("apply_mask: mask/image size mismatch");
  ImageBuffer out = img;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x))
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
  return out;
}

}  // namespace maskreid
