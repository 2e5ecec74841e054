#include "maskreid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <stdexcept>

namespace fs = std::filesystem;

namespace maskreid {

const char* split_dir_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

namespace {

/// Market-style stem: `<id>_c<cam>...`; returns false when it doesn't fit.
bool parse_sample_name(const std::string& stem, int& identity, int& camera) {
  const auto underscore = stem.find('_');
  if (underscore == std::string::npos || underscore == 0) return false;
  try {
    std::size_t used = 0;
    identity = std::stoi(stem.substr(0, underscore), &used);
    if (used != underscore) return false;
  } catch (...) {
    return false;
  }
  if (underscore + 1 >= stem.size() || stem[underscore + 1] != 'c') return false;
  std::size_t pos = underscore + 2;
  std::size_t end = pos;
  while (end < stem.size() && std::isdigit(static_cast<unsigned char>(stem[end]))) ++end;
  if (end == pos) return false;
  camera = std::stoi(stem.substr(pos, end - pos));
  return identity >= -1 && camera >= 0;
}

}  // namespace

std::vector<PersonSample> load_dataset(const std::string& root, Split split,
                                       LoadReport* report) {
  const fs::path dir = fs::path(root) / split_dir_name(split);
  if (!fs::is_directory(dir))
    throw std::runtime_error("load_dataset: no such directory: " + dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  LoadReport local;
  std::vector<PersonSample> samples;
  for (const auto& file : files) {
    int identity = 0, camera = 0;
    if (!parse_sample_name(file.stem().string(), identity, camera)) {
      ++local.skipped;
      continue;
    }
    PersonSample s;
    try {
      s.image = resize_bilinear(read_ppm(file.string()), kCanonicalHeight, kCanonicalWidth);
    } catch (const std::exception&) {
      ++local.skipped;
      continue;
    }
    s.identity = identity;
    s.camera = camera;
    s.is_junk = identity == -1;
    s.source = file.filename().string();
    samples.push_back(std::move(s));
  }
  if (report) *report = local;
  if (samples.empty())
    throw std::runtime_error("load_dataset: no usable samples in " + dir.string());

  // Dense relabeling; junk keeps identity -1.
  std::map<int, int> remap;
  for (const auto& s : samples)
    if (!s.is_junk) remap.emplace(s.identity, 0);
  int next = 0;
  for (auto& [raw, dense] : remap) dense = next++;
  for (auto& s : samples)
    if (!s.is_junk) s.identity = remap.at(s.identity);
  return samples;
}

namespace {

struct Rgb {
  float r, g, b;
};

Rgb hue_color(double hue, float sat, float val) {
  hue = hue - std::floor(hue);
  const double hh = hue * 6.0;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = static_cast<float>(hh - i);
  const float p = val * (1.0f - sat);
  const float q = val * (1.0f - sat * f);
  const float t = val * (1.0f - sat * (1.0f - f));
  switch (i) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

constexpr double kGolden = 0.61803398874989484820;

/// Identity pattern: torso/leg hues spread on the golden-ratio wheel plus a
/// 4x2 binary glyph block over the torso. Coarse on purpose so patterns
/// survive aggressive downscaling.
void draw_identity(ImageBuffer& img, int identity) {
  const int h = img.height(), w = img.width();
  const Rgb shirt = hue_color(identity * kGolden, 0.85f, 0.9f);
  const Rgb pants = hue_color(identity * kGolden + 0.35, 0.75f, 0.65f);
  const Rgb skin{0.87f, 0.72f, 0.60f};
  const std::uint64_t bits = splitmix64(0x5eedULL + identity);

  const int cx = w / 2;
  const int head_r = h / 12;
  const int head_cy = h / 8;
  const int torso_top = head_cy + head_r;
  const int torso_bot = h * 11 / 20;
  const int torso_half = w / 4;
  const int leg_bot = h * 19 / 20;

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float r = 0.82f, g = 0.82f, b = 0.82f;  // background
      const int dx = x - cx;
      const int dy = y - head_cy;
      if (dx * dx + dy * dy <= head_r * head_r) {
        r = skin.r; g = skin.g; b = skin.b;
      } else if (y >= torso_top && y < torso_bot && std::abs(dx) <= torso_half) {
        r = shirt.r; g = shirt.g; b = shirt.b;
        // glyph cells: 4 rows x 2 cols keyed by identity bits
        const int cell_y = (y - torso_top) * 4 / std::max(1, torso_bot - torso_top);
        const int cell_x = dx < 0 ? 0 : 1;
        const int cell = cell_y * 2 + cell_x;
        if ((bits >> cell) & 1ULL) {
          r *= 0.35f; g *= 0.35f; b *= 0.35f;
        }
        // identity-keyed horizontal stripe
        const int period = 6 + static_cast<int>((bits >> 8) & 7ULL);
        if ((y / period) % 2 == 0 && ((bits >> 11) & 1ULL)) {
          r = std::min(1.0f, r + 0.3f);
          g = std::min(1.0f, g + 0.3f);
          b = std::min(1.0f, b + 0.3f);
        }
      } else if (y >= torso_bot && y < leg_bot && std::abs(dx) <= torso_half * 2 / 3) {
        r = pants.r; g = pants.g; b = pants.b;
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
}

void apply_camera_tint(ImageBuffer& img, int camera) {
  const std::uint64_t bits = splitmix64(0xca3e7aULL + camera);
  const float gains[3] = {
      0.82f + 0.3f * static_cast<float>((bits >> 0) & 0xff) / 255.0f,
      0.82f + 0.3f * static_cast<float>((bits >> 8) & 0xff) / 255.0f,
      0.82f + 0.3f * static_cast<float>((bits >> 16) & 0xff) / 255.0f,
  };
  const float lift = 0.04f * static_cast<float>((bits >> 24) & 0xff) / 255.0f;
  float* d = img.data();
  for (std::size_t i = 0; i < img.size(); i += 3)
    for (int c = 0; c < 3; ++c) d[i + c] = d[i + c] * gains[c] + lift;
  img.clamp01();
}

ImageBuffer translate(const ImageBuffer& src, int dy, int dx) {
  ImageBuffer out(src.height(), src.width(), 0.82f);
  for (int y = 0; y < src.height(); ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= src.height()) continue;
    for (int x = 0; x < src.width(); ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= src.width()) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return out;
}

}  // namespace

ImageBuffer render_canonical_identity(int identity) {
  ImageBuffer img(kCanonicalHeight, kCanonicalWidth);
  draw_identity(img, identity);
  return img;
}

std::vector<PersonSample> generate_synthetic_dataset(int n_ids, int imgs_per_id,
                                                     int n_cams, std::uint64_t seed) {
  if (n_ids < 2)
    throw std::invalid_argument("generate_synthetic_dataset: need n_ids >= 2");
  if (imgs_per_id < 2)
    throw std::invalid_argument("generate_synthetic_dataset: need imgs_per_id >= 2");
  if (n_cams < 1)
    throw std::invalid_argument("generate_synthetic_dataset: need n_cams >= 1");

  std::vector<PersonSample> out;
  out.reserve(static_cast<std::size_t>(n_ids) * imgs_per_id);
  for (int id = 0; id < n_ids; ++id) {
    const ImageBuffer canonical = render_canonical_identity(id);
    for (int k = 0; k < imgs_per_id; ++k) {
      Rng rng = make_rng(derive_seed(seed, "synth", id, k));
      const int cam = k % n_cams;
      const int max_dy = kCanonicalHeight / 10;
      const int max_dx = kCanonicalWidth / 10;
      ImageBuffer img = translate(canonical, uniform_int(rng, -max_dy, max_dy),
                                  uniform_int(rng, -max_dx, max_dx));
      apply_camera_tint(img, cam);
      if (bernoulli(rng, 0.3)) {
        const int oh = uniform_int(rng, kCanonicalHeight / 8, kCanonicalHeight / 3);
        const int ow = uniform_int(rng, kCanonicalWidth / 8, kCanonicalWidth / 2);
        const int top = uniform_int(rng, 0, kCanonicalHeight - oh);
        const int left = uniform_int(rng, 0, kCanonicalWidth - ow);
        for (int y = top; y < top + oh; ++y)
          for (int x = left; x < left + ow; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.5f;
      }
      PersonSample s;
      s.image = std::move(img);
      s.identity = id;
      s.camera = cam;
      s.is_junk = false;
      s.source = "synth_" + std::to_string(id) + "_" + std::to_string(k);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void write_split(const std::string& root, Split split,
                 const std::vector<PersonSample>& samples) {
  const fs::path dir = fs::path(root) / split_dir_name(split);
  fs::create_directories(dir);
  int seq = 0;
  for (const auto& s : samples) {
    char name[64];
    std::snprintf(name, sizeof(name), "%04d_c%d_%04d.ppm", s.identity, s.camera, seq++);
    write_ppm((dir / name).string(), s.image);
  }
}

BatchSampler::BatchSampler(const std::vector<PersonSample>& dataset,
                           int identities_per_batch, int images_per_identity,
                           std::uint64_t seed)
    : dataset_(dataset),
      batch_p_(identities_per_batch),
      batch_k_(images_per_identity),
      rng_(make_rng(derive_seed(seed, "sampler"))) {
  if (batch_p_ < 1 || batch_k_ < 1)
    throw std::invalid_argument("BatchSampler: P and K must be >= 1");
  std::map<int, std::vector<int>> by_id;
  for (int i = 0; i < static_cast<int>(dataset_.size()); ++i)
    if (!dataset_[i].is_junk) by_id[dataset_[i].identity].push_back(i);
  for (auto& [id, idx] : by_id) {
    ids_.push_back(id);
    images_by_id_.push_back(std::move(idx));
  }
  if (static_cast<int>(ids_.size()) < batch_p_)
    throw std::invalid_argument("BatchSampler: fewer identities than P");
}

int BatchSampler::batches_per_cycle() const {
  return static_cast<int>((ids_.size() + batch_p_ - 1) / batch_p_);
}

IdentityBatch BatchSampler::next() {
  IdentityBatch batch;
  batch.identities_per_batch = batch_p_;
  batch.images_per_identity = batch_k_;
  batch.indices.reserve(static_cast<std::size_t>(batch_p_) * batch_k_);

  for (int p = 0; p < batch_p_; ++p) {
    if (ring_pos_ >= ring_.size()) {
      ring_.resize(ids_.size());
      std::iota(ring_.begin(), ring_.end(), 0);
      std::shuffle(ring_.begin(), ring_.end(), rng_);
      ring_pos_ = 0;
    }
    const int slot = ring_[ring_pos_++];
    const auto& imgs = images_by_id_[slot];
    if (static_cast<int>(imgs.size()) >= batch_k_) {
      std::vector<int> order(imgs.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng_);
      for (int k = 0; k < batch_k_; ++k) batch.indices.push_back(imgs[order[k]]);
    } else {
      for (int k = 0; k < batch_k_; ++k)
        batch.indices.push_back(imgs[uniform_int(rng_, 0, static_cast<int>(imgs.size()) - 1)]);
    }
  }
  return batch;
}

IdentityBatch sample_batch(const std::vector<PersonSample>& dataset,
                           int identities_per_batch, int images_per_identity,
                           std::uint64_t seed) {
  BatchSampler sampler(dataset, identities_per_batch, images_per_identity, seed);
  return sampler.next();
}

}  // namespace maskreid
