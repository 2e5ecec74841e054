#pragma once

#include <string>
#include <vector>

#include "maskreid/dataset.hpp"
#include "maskreid/encoder.hpp"
#include "maskreid/params.hpp"

namespace maskreid {

/// L2-normalized feature rows with retrieval metadata.
struct EmbeddingSet {
  Tensor<float> features;  // n x D', unit rows
  std::vector<int> identities;
  std::vector<int> cameras;
  std::vector<bool> junk;

  std::size_t size() const { return features.rows(); }
};

struct ExtractOptions {
  bool concat_local = true;  // f_g ++ mean(f_l); otherwise f_g only
};

/// Eval-mode forward (resize only, no augmentation); the retrieval feature
/// is the global feature optionally concatenated with the mean jigsaw
/// local feature, then L2-normalized. Throws on a zero-norm feature.
EmbeddingSet extract_embeddings(const std::vector<PersonSample>& samples,
                                const ParamStore<float>& params,
                                const EncoderConfig& cfg,
                                const ExtractOptions& opts = {});

/// Cosine distance 1 - q.g on unit rows; Q x G.
Tensor<double> distance_matrix(const EmbeddingSet& query, const EmbeddingSet& gallery);

struct EvalResult {
  double mean_ap = 0.0;
  double rank1 = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = fraction of queries matched by rank k
  std::size_t n_queries = 0;   // queries with at least one valid match
  std::size_t n_excluded = 0;  // junk queries or queries with no valid match
};

/// Standard protocol: per query drop gallery entries that share both
/// identity and camera, drop junk, rank by (distance, gallery index).
/// AP = mean_i (i / rank_i) over the query's matches; CMC[k] = fraction of
/// valid queries whose first match lands at rank <= k.
EvalResult evaluate(const EmbeddingSet& query, const EmbeddingSet& gallery);

/// JSON report: {mAP, rank1, cmc[1..50], n_queries, n_excluded, config_digest}.
std::string evaluation_report_json(const EvalResult& result,
                                   const std::string& config_digest);

}  // namespace maskreid
