#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace maskreid {

/// H x W x 3 image, float intensities in [0,1], row-major (y, x, channel).
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width, float fill = 0.0f)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * width * 3, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  /// Clamp every value into [0,1]; pipeline stages call this on exit.
  void clamp01();

  bool all_finite() const;

  friend bool operator==(const ImageBuffer& a, const ImageBuffer& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Deterministic bilinear resize (half-pixel centers, clamp-to-edge).
ImageBuffer resize_bilinear(const ImageBuffer& src, int out_height, int out_width);

ImageBuffer horizontal_flip(const ImageBuffer& src);

/// Binary PPM (P6) round-trip: 8-bit RGB, the dataset on-disk format.
/// Values quantize to round(v * 255) on write and map back as v / 255.
void write_ppm(const std::string& path, const ImageBuffer& img);
ImageBuffer read_ppm(const std::string& path);

}  // namespace maskreid
