#pragma once

#include <string>
#include <vector>

#include "maskreid/image.hpp"
#include "maskreid/nn.hpp"

namespace maskreid {

struct EncoderConfig {
  int height = 32;
  int width = 32;
  int patch = 8;
  int stride = 8;  // stride < patch gives the sliding-window overlap setting
  int dim = 32;
  int layers = 4;  // backbone runs layers-1 blocks; the last block is shared
                   // by the global head and the jigsaw branch
  int heads = 4;
  int mlp_hidden = 0;  // 0 -> 4*dim
  int jigsaw_groups = 2;
  int jigsaw_shift = 5;
  double sie_coefficient = 3.0;
  int n_cameras = 1;
  bool learn_patch_projection = false;  // default frozen

  int patches_y() const { return (height - patch) / stride + 1; }
  int patches_x() const { return (width - patch) / stride + 1; }
  int num_patches() const { return patches_y() * patches_x(); }
  int patch_values() const { return 3 * patch * patch; }
  int mlp_dim() const { return mlp_hidden > 0 ? mlp_hidden : 4 * dim; }

  void validate() const;
};

/// Extracts p x p patches at the configured stride and flattens each to a
/// 3p^2 row, raster order.
template <typename T>
Tensor<T> patchify(const ImageBuffer& img, const EncoderConfig& cfg) {
  if (img.height() != cfg.height || img.width() != cfg.width)
    throw std::invalid_argument("patchify: image does not match encoder size");
  Tensor<T> out(cfg.num_patches(), cfg.patch_values());
  std::size_t row = 0;
  for (int py = 0; py < cfg.patches_y(); ++py)
    for (int px = 0; px < cfg.patches_x(); ++px, ++row) {
      std::size_t col = 0;
      for (int y = 0; y < cfg.patch; ++y)
        for (int x = 0; x < cfg.patch; ++x)
          for (int c = 0; c < 3; ++c)
            out(row, col++) =
                static_cast<T>(img.at(py * cfg.stride + y, px * cfg.stride + x, c));
    }
  return out;
}

/// Creates (zeroed) encoder parameters with the right trainable/decay flags.
template <typename T>
void add_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg) {
  cfg.validate();
  const bool learn = cfg.learn_patch_projection;
  store.add("patch_embed/weight", cfg.patch_values(), cfg.dim, learn, learn);
  store.add("patch_embed/bias", 1, cfg.dim, learn, false);
  store.add("cls_token", 1, cfg.dim, true, false);
  store.add("pos_embed", cfg.num_patches() + 1, cfg.dim, true, false);
  store.add("sie/table", cfg.n_cameras, cfg.dim, true, false);
  for (int i = 0; i < cfg.layers; ++i)
    add_block_params(store, "blocks/" + std::to_string(i), cfg.dim, cfg.mlp_dim());
}

template <typename T>
void init_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg,
                         std::uint64_t seed) {
  for (const char* name : {"patch_embed/weight", "cls_token", "pos_embed", "sie/table"})
    fill_trunc_normal(store.at(name).value, seed, name);
  for (int i = 0; i < cfg.layers; ++i)
    init_block_params(store, "blocks/" + std::to_string(i), seed);
}

/// Patch embedding: flattened patches through the (frozen) linear
/// projection. N x D output.
template <typename T>
Var patch_embed(Tape<T>& tape, BoundParams<T>& bp, const EncoderConfig& cfg,
                const Tensor<T>& patches) {
  if (patches.rows() != static_cast<std::size_t>(cfg.num_patches()) ||
      patches.cols() != static_cast<std::size_t>(cfg.patch_values()))
    throw std::invalid_argument("patch_embed: patch matrix shape mismatch");
  const Var x = tape.leaf(patches, false);
  return tape.linear(x, bp("patch_embed/weight"), bp("patch_embed/bias"));
}

/// Backbone tail after patch embedding: class token, position and
/// camera-keyed side information embeddings, then the first layers-1
/// blocks. Returns the (N+1) x D sequence entering the final block.
template <typename T>
Var forward_backbone_embedded(Tape<T>& tape, BoundParams<T>& bp,
                              const EncoderConfig& cfg, Var embedded, int camera) {
  if (camera < 0 || camera >= cfg.n_cameras)
    throw std::invalid_argument("forward_backbone: camera id out of range");
  Var tokens = tape.concat_rows({bp("cls_token"), embedded});
  tokens = tape.add(tokens, bp("pos_embed"));
  if (cfg.sie_coefficient != 0.0) {
    Var row = tape.slice_rows(bp("sie/table"), camera, 1);
    tokens = tape.add_rowvec(tokens, tape.mul_scalar(row, T(cfg.sie_coefficient)));
  }
  for (int i = 0; i + 1 < cfg.layers; ++i)
    tokens = transformer_block(tape, bp, "blocks/" + std::to_string(i), tokens, cfg.heads);
  return tokens;
}

template <typename T>
Var forward_backbone(Tape<T>& tape, BoundParams<T>& bp, const EncoderConfig& cfg,
                     const Tensor<T>& patches, int camera) {
  return forward_backbone_embedded(tape, bp, cfg, patch_embed(tape, bp, cfg, patches),
                                   camera);
}

/// Final block over the full sequence; the class-token output is the
/// global feature (1 x D).
template <typename T>
Var global_branch(Tape<T>& tape, BoundParams<T>& bp, const EncoderConfig& cfg,
                  Var tokens) {
  Var out = transformer_block(tape, bp, "blocks/" + std::to_string(cfg.layers - 1),
                              tokens, cfg.heads);
  return tape.slice_rows(out, 0, 1);
}

/// Cyclic shift + stride interleave of the N patch slots: shifted position
/// i holds patch (i + shift) mod N and lands in group i mod K.
std::vector<std::vector<std::size_t>> jigsaw_group_indices(int num_patches, int groups,
                                                           int shift);

/// Each group, with a copy of the class token in front, runs through the
/// same final block as the global branch (shared weights); the class-token
/// outputs are the K local features (each 1 x D).
template <typename T>
std::vector<Var> jigsaw_branch(Tape<T>& tape, BoundParams<T>& bp,
                               const EncoderConfig& cfg, Var tokens) {
  const auto groups =
      jigsaw_group_indices(cfg.num_patches(), cfg.jigsaw_groups, cfg.jigsaw_shift);
  const std::string block = "blocks/" + std::to_string(cfg.layers - 1);
  std::vector<Var> locals;
  locals.reserve(groups.size());
  for (const auto& group : groups) {
    std::vector<std::size_t> rows;
    rows.reserve(group.size() + 1);
    rows.push_back(0);  // class token
    for (std::size_t g : group) rows.push_back(g + 1);
    Var seq = tape.gather_rows(tokens, std::move(rows));
    Var out = transformer_block(tape, bp, block, seq, cfg.heads);
    locals.push_back(tape.slice_rows(out, 0, 1));
  }
  return locals;
}

}  // namespace maskreid
