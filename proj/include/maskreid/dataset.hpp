#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskreid/image.hpp"
#include "maskreid/rng.hpp"

namespace maskreid {

/// Canonical image size every sample is resized to on ingestion.
inline constexpr int kCanonicalHeight = 256;
inline constexpr int kCanonicalWidth = 128;

struct PersonSample {
  ImageBuffer image;
  int identity = -1;  // dense label within the split; -1 for junk
  int camera = 0;
  bool is_junk = false;
  std::string source;  // file name or synthetic tag
};

enum class Split { train, query, gallery };
const char* split_dir_name(Split s);

struct LoadReport {
  std::size_t skipped = 0;  // unparsable or unreadable files
};

/// Reads `<root>/<split>/<id>_c<cam>*.ppm`. id == -1 marks junk samples;
/// non-junk identities are re-mapped to dense 0..C-1 labels, junk keeps -1.
/// Throws if no usable sample is found.
std::vector<PersonSample> load_dataset(const std::string& root, Split split,
                                       LoadReport* report = nullptr);

/// Deterministic procedural identities: per-id glyph/stripe pattern on a
/// body silhouette, per-camera color tint, per-image translation (<=10% of
/// the size) and, with probability 0.3, a gray occluder rectangle.
/// Cameras are assigned round-robin over the images of each identity.
std::vector<PersonSample> generate_synthetic_dataset(int n_ids, int imgs_per_id,
                                                     int n_cams, std::uint64_t seed);

/// Renders the pattern of one identity without camera/translation/occluder
/// effects (used to verify identities are separable).
ImageBuffer render_canonical_identity(int identity);

/// Writes samples into `<root>/<split>/` as PPM files with Market-style
/// names `<id4>_c<cam>_<seq4>.ppm`.
void write_split(const std::string& root, Split split,
                 const std::vector<PersonSample>& samples);

struct IdentityBatch {
  std::vector<int> indices;  // into the dataset vector
  int identities_per_batch = 0;   // P
  int images_per_identity = 0;    // K
};

/// P identities x K images per batch. Cycles through a shuffled identity
/// ring so every identity is visited before any repeats; identities with
/// fewer than K images are sampled with replacement. Junk samples are
/// never batched.
class BatchSampler {
 public:
  BatchSampler(const std::vector<PersonSample>& dataset, int identities_per_batch,
               int images_per_identity, std::uint64_t seed);

  IdentityBatch next();

  int identity_count() const { return static_cast<int>(ids_.size()); }
  /// Batches needed to touch every identity once.
  int batches_per_cycle() const;

 private:
  const std::vector<PersonSample>& dataset_;
  int batch_p_;
  int batch_k_;
  Rng rng_;
  std::vector<int> ids_;                        // distinct non-junk labels
  std::vector<std::vector<int>> images_by_id_;  // dataset indices per label
  std::vector<int> ring_;
  std::size_t ring_pos_ = 0;
};

/// One-shot convenience wrapper around BatchSampler.
IdentityBatch sample_batch(const std::vector<PersonSample>& dataset,
                           int identities_per_batch, int images_per_identity,
                           std::uint64_t seed);

}  // namespace maskreid
