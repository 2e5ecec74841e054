#pragma once

// Plain-loop reference forward pass for tiny encoder configs, written
// directly from the layer definitions on vector<vector<double>>. Kept
// deliberately independent of the tape so the two routes can be compared.

#include <cmath>
#include <vector>

#include "maskreid/encoder.hpp"

namespace maskreid::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor<double>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline Mat ref_matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat ref_linear(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = ref_matmul(x, w);
  for (auto& row : y)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[0][j];
  return y;
}

inline Mat ref_layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, double eps) {
  Mat y = x;
  for (auto& row : y) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= row.size();
    for (double v : row) var += (v - mean) * (v - mean);
    var /= row.size();
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = (row[j] - mean) * inv * gamma[0][j] + beta[0][j];
  }
  return y;
}

inline Mat ref_block(const ParamStore<double>& params, const std::string& prefix,
                     const Mat& x, int heads) {
  const auto g1 = to_mat(params.at(prefix + "/ln1/gamma").value);
  const auto b1 = to_mat(params.at(prefix + "/ln1/beta").value);
  const Mat h = ref_layer_norm(x, g1, b1, kLayerNormEps);

  const Mat q = ref_linear(h, to_mat(params.at(prefix + "/attn/wq").value),
                           to_mat(params.at(prefix + "/attn/bq").value));
  const Mat k = ref_linear(h, to_mat(params.at(prefix + "/attn/wk").value),
                           to_mat(params.at(prefix + "/attn/bk").value));
  const Mat v = ref_linear(h, to_mat(params.at(prefix + "/attn/wv").value),
                           to_mat(params.at(prefix + "/attn/bv").value));

  const std::size_t n = x.size(), dim = x[0].size();
  const std::size_t hd = dim / heads;
  Mat attn_out(n, std::vector<double>(dim, 0.0));
  for (int head = 0; head < heads; ++head) {
    const std::size_t c0 = head * hd;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> scores(n, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t d = 0; d < hd; ++d) s += q[i][c0 + d] * k[j][c0 + d];
        scores[j] = s / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, scores[j]);
      }
      double denom = 0;
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        denom += scores[j];
      }
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t d = 0; d < hd; ++d)
          attn_out[i][c0 + d] += scores[j] / denom * v[j][c0 + d];
    }
  }

  Mat x1 = ref_linear(attn_out, to_mat(params.at(prefix + "/attn/wo").value),
                      to_mat(params.at(prefix + "/attn/bo").value));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) x1[i][j] += x[i][j];

  const auto g2 = to_mat(params.at(prefix + "/ln2/gamma").value);
  const auto b2 = to_mat(params.at(prefix + "/ln2/beta").value);
  Mat m = ref_linear(ref_layer_norm(x1, g2, b2, kLayerNormEps),
                     to_mat(params.at(prefix + "/mlp/w1").value),
                     to_mat(params.at(prefix + "/mlp/b1").value));
  for (auto& row : m)
    for (double& val : row) val = 0.5 * val * (1.0 + std::erf(val / std::sqrt(2.0)));
  Mat m2 = ref_linear(m, to_mat(params.at(prefix + "/mlp/w2").value),
                      to_mat(params.at(prefix + "/mlp/b2").value));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) m2[i][j] += x1[i][j];
  return m2;
}

/// Reference of forward_backbone: embeddings, class token, position and
/// side-information embeddings, layers-1 blocks.
inline Mat ref_backbone(const ParamStore<double>& params, const EncoderConfig& cfg,
                        const Tensor<double>& patches, int camera) {
  const Mat emb = ref_linear(to_mat(patches),
                             to_mat(params.at("patch_embed/weight").value),
                             to_mat(params.at("patch_embed/bias").value));
  const auto cls = to_mat(params.at("cls_token").value);
  const auto pos = to_mat(params.at("pos_embed").value);
  const auto sie = to_mat(params.at("sie/table").value);

  Mat tokens(emb.size() + 1, std::vector<double>(cfg.dim));
  tokens[0] = cls[0];
  for (std::size_t i = 0; i < emb.size(); ++i) tokens[i + 1] = emb[i];
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (int j = 0; j < cfg.dim; ++j)
      tokens[i][j] += pos[i][j] + cfg.sie_coefficient * sie[camera][j];

  for (int layer = 0; layer + 1 < cfg.layers; ++layer)
    tokens = ref_block(params, "blocks/" + std::to_string(layer), tokens, cfg.heads);
  return tokens;
}

}  // namespace maskreid::testing
