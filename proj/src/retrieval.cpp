#include "maskreid/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace maskreid {

EmbeddingSet extract_embeddings(const std::vector<PersonSample>& samples,
                                const ParamStore<float>& params,
                                const EncoderConfig& cfg, const ExtractOptions& opts) {
  if (samples.empty()) throw std::invalid_argument("extract_embeddings: no samples");
  const int feat_dim = opts.concat_local ? 2 * cfg.dim : cfg.dim;
  EmbeddingSet out;
  out.features = Tensor<float>(samples.size(), feat_dim);

  // params are read-only here; BoundParams wants a mutable store reference
  // for running-stat updates, which eval mode never performs.
  auto& store = const_cast<ParamStore<float>&>(params);

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PersonSample& s = samples[i];
    const ImageBuffer img = resize_bilinear(s.image, cfg.height, cfg.width);
    Tape<float> tape(false);
    BoundParams<float> bp(tape, store);
    Var tokens = forward_backbone(tape, bp, cfg, patchify<float>(img, cfg), s.camera);
    const Tensor<float>& g = tape.val(global_branch(tape, bp, cfg, tokens));
    for (int j = 0; j < cfg.dim; ++j) out.features(i, j) = g(0, j);
    if (opts.concat_local) {
      std::vector<Var> locals = jigsaw_branch(tape, bp, cfg, tokens);
      std::vector<float> mean(cfg.dim, 0.0f);
      for (Var v : locals) {
        const Tensor<float>& row = tape.val(v);
        for (int j = 0; j < cfg.dim; ++j) mean[j] += row(0, j);
      }
      for (int j = 0; j < cfg.dim; ++j)
        out.features(i, cfg.dim + j) = mean[j] / static_cast<float>(locals.size());
    }
    double norm_sq = 0;
    for (int j = 0; j < feat_dim; ++j)
      norm_sq += static_cast<double>(out.features(i, j)) * out.features(i, j);
    const double norm = std::sqrt(norm_sq);
    if (!(norm > 0) || !std::isfinite(norm))
      throw std::runtime_error("extract_embeddings: zero-norm feature for sample " +
                               s.source);
    for (int j = 0; j < feat_dim; ++j)
      out.features(i, j) = static_cast<float>(out.features(i, j) / norm);
    out.identities.push_back(s.identity);
    out.cameras.push_back(s.camera);
    out.junk.push_back(s.is_junk);
  }
  return out;
}

Tensor<double> distance_matrix(const EmbeddingSet& query, const EmbeddingSet& gallery) {
  if (query.features.cols() != gallery.features.cols())
    throw std::invalid_argument("distance_matrix: feature dim mismatch");
  Tensor<double> d(query.size(), gallery.size());
  for (std::size_t q = 0; q < query.size(); ++q)
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      double dot = 0;
      for (std::size_t j = 0; j < query.features.cols(); ++j)
        dot += static_cast<double>(query.features(q, j)) * gallery.features(g, j);
      d(q, g) = 1.0 - dot;
    }
  return d;
}

EvalResult evaluate(const EmbeddingSet& query, const EmbeddingSet& gallery) {
  if (query.size() == 0 || gallery.size() == 0)
    throw std::invalid_argument("evaluate: empty query or gallery");
  const Tensor<double> dist = distance_matrix(query, gallery);

  EvalResult res;
  res.cmc.assign(gallery.size(), 0.0);
  double ap_sum = 0.0;

  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < query.size(); ++q) {
    if (query.junk[q]) {
      ++res.n_excluded;
      continue;
    }
    order.clear();
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (gallery.junk[g]) continue;
      if (gallery.identities[g] == query.identities[q] &&
          gallery.cameras[g] == query.cameras[q])
        continue;
      order.push_back(g);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dist(q, a) != dist(q, b)) return dist(q, a) < dist(q, b);
      return a < b;
    });

    double ap = 0.0;
    std::size_t matches = 0, first_rank = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery.identities[order[r]] != query.identities[q]) continue;
      ++matches;
      ap += static_cast<double>(matches) / static_cast<double>(r + 1);
      if (matches == 1) first_rank = r + 1;
    }
    if (matches == 0) {
      ++res.n_excluded;
      continue;
    }
    ++res.n_queries;
    ap_sum += ap / static_cast<double>(matches);
    for (std::size_t k = first_rank - 1; k < res.cmc.size(); ++k) res.cmc[k] += 1.0;
  }

  if (res.n_queries == 0) throw std::runtime_error("evaluate: no valid query");
  res.mean_ap = ap_sum / static_cast<double>(res.n_queries);
  for (double& v : res.cmc) v /= static_cast<double>(res.n_queries);
  res.rank1 = res.cmc.empty() ? 0.0 : res.cmc[0];
  return res;
}

std::string evaluation_report_json(const EvalResult& result,
                                   const std::string& config_digest) {
  nlohmann::json j;
  j["mAP"] = result.mean_ap;
  j["rank1"] = result.rank1;
  std::vector<double> cmc50;
  for (std::size_t k = 0; k < 50; ++k)
    cmc50.push_back(k < result.cmc.size() ? result.cmc[k]
                                          : (result.cmc.empty() ? 0.0 : result.cmc.back()));
  j["cmc"] = cmc50;
  j["n_queries"] = result.n_queries;
  j["n_excluded"] = result.n_excluded;
  j["config_digest"] = config_digest;
  return j.dump(2);
}

}  // namespace maskreid
