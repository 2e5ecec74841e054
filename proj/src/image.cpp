#include "maskreid/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace maskreid {

void ImageBuffer::clamp01() {
  for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

bool ImageBuffer::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

ImageBuffer resize_bilinear(const ImageBuffer& src, int out_height, int out_width) {
  if (src.empty()) throw std::invalid_argument("resize_bilinear: empty image");
  if (out_height < 1 || out_width < 1)
    throw std::invalid_argument("resize_bilinear: bad target size");
  if (out_height == src.height() && out_width == src.width()) return src;

  ImageBuffer out(out_height, out_width);
  const double sy = static_cast<double>(src.height()) / out_height;
  const double sx = static_cast<double>(src.width()) / out_width;
  for (int y = 0; y < out_height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < out_width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < 3; ++c) {
        const float top = src.at(y0, x0, c) * (1.0f - wx) + src.at(y0, x1, c) * wx;
        const float bot = src.at(y1, x0, c) * (1.0f - wx) + src.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  out.clamp01();
  return out;
}

ImageBuffer horizontal_flip(const ImageBuffer& src) {
  ImageBuffer out(src.height(), src.width());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = src.at(y, src.width() - 1 - x, c);
  return out;
}

void write_ppm(const std::string& path, const ImageBuffer& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

namespace {
int read_ppm_token(std::istream& in) {
  // Skips whitespace and '#' comments per the netpbm grammar.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw std::runtime_error("read_ppm: truncated header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}
}  // namespace

ImageBuffer read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  char magic[2];
  f.read(magic, 2);
  if (!f || magic[0] != 'P' || magic[1] != '6')
    throw std::runtime_error("read_ppm: not a binary PPM: " + path);
  const int width = read_ppm_token(f);
  const int height = read_ppm_token(f);
  const int maxval = read_ppm_token(f);
  if (width < 1 || height < 1 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported PPM header in " + path);
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  ImageBuffer img(height, width);
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.data()[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

}  // namespace maskreid
