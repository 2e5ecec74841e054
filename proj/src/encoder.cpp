#include "maskreid/encoder.hpp"

#include <stdexcept>

namespace maskreid {

void EncoderConfig::validate() const {
  if (height < 1 || width < 1) throw std::invalid_argument("EncoderConfig: bad size");
  if (patch < 1 || patch > height || patch > width)
    throw std::invalid_argument("EncoderConfig: patch must fit in the image");
  if (stride < 1) throw std::invalid_argument("EncoderConfig: stride must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads != 0)
    throw std::invalid_argument("EncoderConfig: dim must be divisible by heads");
  if (layers < 2)
    throw std::invalid_argument("EncoderConfig: need at least 2 layers (backbone + shared final)");
  if (jigsaw_groups < 1 || jigsaw_groups > num_patches())
    throw std::invalid_argument("EncoderConfig: jigsaw groups must be in [1, N]");
  if (jigsaw_shift < 0) throw std::invalid_argument("EncoderConfig: jigsaw shift must be >= 0");
  if (n_cameras < 1) throw std::invalid_argument("EncoderConfig: n_cameras must be >= 1");
}

std::vector<std::vector<std::size_t>> jigsaw_group_indices(int num_patches, int groups,
                                                           int shift) {
  if (groups < 1 || groups > num_patches)
    throw std::invalid_argument("jigsaw_group_indices: K must be in [1, N]");
  std::vector<std::vector<std::size_t>> out(groups);
  for (int i = 0; i < num_patches; ++i)
    out[i % groups].push_back(static_cast<std::size_t>((i + shift) % num_patches));
  return out;
}

}  // namespace maskreid
