#include "maskreid/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace maskreid {

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    kernel[i + radius] = static_cast<float>(w);
    sum += w;
  }
  for (float& w : kernel) w = static_cast<float>(w / sum);

  const int h = img.height(), w = img.width();
  ImageBuffer tmp(h, w), out(h, w);
  // horizontal pass
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, w - 1);
          acc += kernel[k + radius] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  // vertical pass
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, h - 1);
          acc += kernel[k + radius] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = acc;
      }
  out.clamp01();
  return out;
}

void JitterStrengths::validate() const {
  if (brightness < 0 || brightness > 1 || contrast < 0 || contrast > 1 ||
      saturation < 0 || saturation > 1)
    throw std::invalid_argument("JitterStrengths: strengths must be in [0,1]");
  if (hue < 0 || hue > 0.5)
    throw std::invalid_argument("JitterStrengths: hue must be in [0,0.5]");
}

namespace {

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx <= 0.0f ? 0.0f : d / mx;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = hh - i;
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

ImageBuffer color_jitter(const ImageBuffer& img, const JitterStrengths& s, Rng& rng) {
  s.validate();
  const float fb = static_cast<float>(uniform_real(rng, 1.0 - s.brightness, 1.0 + s.brightness));
  const float fc = static_cast<float>(uniform_real(rng, 1.0 - s.contrast, 1.0 + s.contrast));
  const float fs = static_cast<float>(uniform_real(rng, 1.0 - s.saturation, 1.0 + s.saturation));
  const float dh = static_cast<float>(uniform_real(rng, -s.hue, s.hue));

  ImageBuffer out = img;
  const int n = img.height() * img.width();
  float* d = out.data();

  if (fb != 1.0f)
    for (int i = 0; i < n * 3; ++i) d[i] *= fb;

  if (fc != 1.0f) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += luma(d[i * 3], d[i * 3 + 1], d[i * 3 + 2]);
    const float m = static_cast<float>(mean / n);
    for (int i = 0; i < n * 3; ++i) d[i] = m + (d[i] - m) * fc;
  }

  if (fs != 1.0f)
    for (int i = 0; i < n; ++i) {
      const float l = luma(d[i * 3], d[i * 3 + 1], d[i * 3 + 2]);
      for (int c = 0; c < 3; ++c) d[i * 3 + c] = l + (d[i * 3 + c] - l) * fs;
    }

  if (dh != 0.0f)
    for (int i = 0; i < n; ++i) {
      float h, sat, v;
      float r = std::clamp(d[i * 3], 0.0f, 1.0f);
      float g = std::clamp(d[i * 3 + 1], 0.0f, 1.0f);
      float b = std::clamp(d[i * 3 + 2], 0.0f, 1.0f);
      rgb_to_hsv(r, g, b, h, sat, v);
      hsv_to_rgb(h + dh, sat, v, r, g, b);
      d[i * 3] = r;
      d[i * 3 + 1] = g;
      d[i * 3 + 2] = b;
    }

  out.clamp01();
  return out;
}

ImageBuffer solarize(const ImageBuffer& img, double threshold) {
  ImageBuffer out = img;
  const float t = static_cast<float>(threshold);
  float* d = out.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (d[i] >= t) d[i] = 1.0f - d[i];
  out.clamp01();
  return out;
}

ImageBuffer random_erasing(const ImageBuffer& img, const RandomErasingParams& p, Rng& rng) {
  const int h = img.height(), w = img.width();
  ImageBuffer out = img;
  for (int attempt = 0; attempt < p.attempts; ++attempt) {
    const double area = uniform_real(rng, p.area_lo, p.area_hi) * h * w;
    const double aspect = uniform_real(rng, p.aspect_lo, p.aspect_hi);
    const int eh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    const int ew = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (eh < 1 || ew < 1 || eh >= h || ew >= w) continue;
    const int top = uniform_int(rng, 0, h - eh);
    const int left = uniform_int(rng, 0, w - ew);
    for (int y = top; y < top + eh; ++y)
      for (int x = left; x < left + ew; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
    break;
  }
  return out;
}

ImageBuffer normal_pipeline(const ImageBuffer& img, const NormalAugConfig& cfg, Rng& rng) {
  ImageBuffer out = img;
  if (bernoulli(rng, cfg.flip_p)) out = horizontal_flip(out);

  if (cfg.pad > 0) {
    const int h = out.height(), w = out.width();
    const int top = uniform_int(rng, 0, 2 * cfg.pad);
    const int left = uniform_int(rng, 0, 2 * cfg.pad);
    ImageBuffer cropped(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = y + top - cfg.pad;
        const int sx = x + left - cfg.pad;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w)
          for (int c = 0; c < 3; ++c) cropped.at(y, x, c) = out.at(sy, sx, c);
      }
    out = std::move(cropped);
  }

  if (bernoulli(rng, cfg.erase_p)) out = random_erasing(out, cfg.erasing, rng);
  return out;
}

void StrongAugConfig::validate(int image_height, int image_width) const {
  mask.validate(image_height, image_width);
  jitter.validate();
  if (jitter_p < 0 || jitter_p > 1 || blur_p < 0 || blur_p > 1 || solarize_p < 0 ||
      solarize_p > 1)
    throw std::invalid_argument("StrongAugConfig: probabilities must be in [0,1]");
  if (!(blur_sigma_lo <= blur_sigma_hi) || blur_sigma_lo <= 0)
    throw std::invalid_argument("StrongAugConfig: need 0 < sigma_lo <= sigma_hi");
}

StrongAugResult strong_pipeline(const ImageBuffer& img, const StrongAugConfig& cfg,
                                Rng& rng) {
  cfg.validate(img.height(), img.width());
  ImageBuffer out = img;
  if (bernoulli(rng, cfg.jitter_p)) out = color_jitter(out, cfg.jitter, rng);
  if (bernoulli(rng, cfg.blur_p))
    out = gaussian_blur(out, uniform_real(rng, cfg.blur_sigma_lo, cfg.blur_sigma_hi));
  if (bernoulli(rng, cfg.solarize_p)) out = solarize(out, cfg.solarize_threshold);

  StrongAugResult result;
  result.mask = random_rectangle_mask(out.height(), out.width(), cfg.mask, rng);
  result.image = apply_mask(out, result.mask);
  return result;
}

OccluderKind parse_occluder_kind(const std::string& name) {
  if (name == "random_erasing") return OccluderKind::random_erasing;
  if (name == "cutout") return OccluderKind::cutout;
  if (name == "hide_and_seek") return OccluderKind::hide_and_seek;
  throw std::invalid_argument("unknown occluder kind: " + name);
}

ImageBuffer baseline_occluder(const ImageBuffer& img, OccluderKind kind,
                              const OccluderParams& p, Rng& rng) {
  const int h = img.height(), w = img.width();
  switch (kind) {
    case OccluderKind::random_erasing:
      return random_erasing(img, p.erasing, rng);
    case OccluderKind::cutout: {
      int size = p.cutout_size >= 0 ? p.cutout_size : std::min(h, w) / 2;
      if (size == 0) return img;
      size = std::min({size, h, w});
      const int top = uniform_int(rng, 0, h - size);
      const int left = uniform_int(rng, 0, w - size);
      ImageBuffer out = img;
      for (int y = top; y < top + size; ++y)
        for (int x = left; x < left + size; ++x)
          for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
      return out;
    }
    case OccluderKind::hide_and_seek: {
      const int grid = std::max(1, p.hide_grid);
      ImageBuffer out = img;
      for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
          const bool hide = bernoulli(rng, p.hide_p);
          if (!hide) continue;
          const int y0 = gy * h / grid, y1 = (gy + 1) * h / grid;
          const int x0 = gx * w / grid, x1 = (gx + 1) * w / grid;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
              for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
        }
      return out;
    }
  }
  throw std::invalid_argument("baseline_occluder: unknown kind");
}

}  // namespace maskreid
