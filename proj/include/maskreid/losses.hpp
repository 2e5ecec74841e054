#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "maskreid/tape.hpp"

namespace maskreid {

struct LossConfig {
  double lambda = 0.95;        // joint-loss balance
  bool mine_per_stream = true; // mine triplets per feature stream vs on the
                               // global stream only
};

struct Triplet {
  std::size_t anchor, positive, negative;
};

/// Batch-hard mining on raw features: per anchor, the farthest same-id
/// sample and the nearest other-id sample (Euclidean), ties broken by the
/// lowest index. Anchors without a same-id partner or without any other-id
/// sample are skipped; throws if every anchor is skipped.
template <typename T>
std::vector<Triplet> mine_batch_hard(const Tensor<T>& features,
                                     const std::vector<int>& labels) {
  const std::size_t n = features.rows();
  if (labels.size() != n) throw std::invalid_argument("mine_batch_hard: label count");
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < n; ++a) {
    double best_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
    std::size_t pos = n, neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      double d = 0;
      for (std::size_t c = 0; c < features.cols(); ++c) {
        const double diff = static_cast<double>(features(a, c)) - features(j, c);
        d += diff * diff;
      }
      if (labels[j] == labels[a]) {
        if (d > best_pos) {
          best_pos = d;
          pos = j;
        }
      } else if (d < best_neg) {
        best_neg = d;
        neg = j;
      }
    }
    if (pos < n && neg < n) out.push_back({a, pos, neg});
  }
  if (out.empty())
    throw std::runtime_error("mine_batch_hard: no valid triplet in batch");
  return out;
}

/// Mean -log softmax(logits)[label] over the batch.
template <typename T>
Var id_loss_mean(Tape<T>& tape, Var logits, const std::vector<std::size_t>& labels) {
  return tape.mean_all(tape.cross_entropy_rows(logits, labels));
}

/// Soft-margin triplet loss log(1 + exp(d_ap^2 - d_an^2)) averaged over
/// the mined triplets; distances are squared Euclidean on the given rows.
template <typename T>
Var triplet_loss_mean(Tape<T>& tape, Var features, const std::vector<Triplet>& triplets) {
  if (triplets.empty()) throw std::invalid_argument("triplet_loss_mean: no triplets");
  std::vector<std::size_t> ai, pi, ni;
  for (const Triplet& t : triplets) {
    ai.push_back(t.anchor);
    pi.push_back(t.positive);
    ni.push_back(t.negative);
  }
  Var a = tape.gather_rows(features, ai);
  Var p = tape.gather_rows(features, pi);
  Var n = tape.gather_rows(features, ni);
  Var dp = tape.sub(a, p);
  Var dn = tape.sub(a, n);
  Var d_ap = tape.row_sums(tape.mul(dp, dp));
  Var d_an = tape.row_sums(tape.mul(dn, dn));
  return tape.mean_all(tape.softplus(tape.sub(d_ap, d_an)));
}

/// Mean row-wise negative cosine similarity.
template <typename T>
Var negative_cosine_mean(Tape<T>& tape, Var predictions, Var targets) {
  return tape.mean_all(tape.neg_cosine_rows(predictions, targets));
}

/// Symmetric stop-gradient contrastive loss:
/// 0.5 * D(p1, stopgrad(z2)) + 0.5 * D(p2, stopgrad(z1)).
template <typename T>
Var contrastive_loss(Tape<T>& tape, Var p1, Var z1, Var p2, Var z2) {
  Var left = negative_cosine_mean(tape, p1, tape.stop_gradient(z2));
  Var right = negative_cosine_mean(tape, p2, tape.stop_gradient(z1));
  return tape.add(tape.mul_scalar(left, T(0.5)), tape.mul_scalar(right, T(0.5)));
}

/// lambda * L_supervised + (1 - lambda) * L_contrastive.
template <typename T>
Var joint_loss(Tape<T>& tape, Var supervised, Var contrastive, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("joint_loss: lambda must be in [0,1]");
  return tape.add(tape.mul_scalar(supervised, T(lambda)),
                  tape.mul_scalar(contrastive, T(1.0 - lambda)));
}

struct SupervisedTerms {
  Var total;       // L_ID(f_g) + L_T(f_g) + (1/K) sum_k [L_ID(f_l_k) + L_T(f_l_k)]
  Var id_global;
  Var tri_global;
  std::vector<Var> id_local;
  std::vector<Var> tri_local;
  std::vector<std::vector<Triplet>> plans;  // mined plan: global then K locals
};

/// Assembles the supervised objective from per-stream logits/features.
/// Triplets are mined per stream on the raw features unless
/// mine_per_stream is off, in which case the global-stream plan is reused.
template <typename T>
SupervisedTerms supervised_loss(Tape<T>& tape, Var features_global, Var logits_global,
                                const std::vector<Var>& features_local,
                                const std::vector<Var>& logits_local,
                                const std::vector<int>& labels, bool mine_per_stream,
                                const std::vector<std::vector<Triplet>>* frozen_plan = nullptr) {
  if (features_local.size() != logits_local.size())
    throw std::invalid_argument("supervised_loss: stream count mismatch");
  std::vector<std::size_t> class_labels(labels.begin(), labels.end());

  SupervisedTerms terms;
  const std::vector<Triplet> global_plan =
      frozen_plan ? (*frozen_plan)[0] : mine_batch_hard(tape.val(features_global), labels);
  terms.plans.push_back(global_plan);
  terms.id_global = id_loss_mean(tape, logits_global, class_labels);
  terms.tri_global = triplet_loss_mean(tape, features_global, global_plan);
  Var total = tape.add(terms.id_global, terms.tri_global);

  const std::size_t k = features_local.size();
  if (k > 0) {
    Var local_sum;
    for (std::size_t s = 0; s < k; ++s) {
      const std::vector<Triplet> plan =
          frozen_plan ? (*frozen_plan)[s + 1]
          : mine_per_stream ? mine_batch_hard(tape.val(features_local[s]), labels)
                            : global_plan;
      terms.plans.push_back(plan);
      Var id_s = id_loss_mean(tape, logits_local[s], class_labels);
      Var tri_s = triplet_loss_mean(tape, features_local[s], plan);
      terms.id_local.push_back(id_s);
      terms.tri_local.push_back(tri_s);
      Var pair = tape.add(id_s, tri_s);
      local_sum = s == 0 ? pair : tape.add(local_sum, pair);
    }
    total = tape.add(total, tape.mul_scalar(local_sum, T(1) / static_cast<T>(k)));
  }
  terms.total = total;
  return terms;
}

// ------------------------------------------------------- scalar wrappers --
// Spec-level single-sample forms, evaluated through the same graph ops.

double id_loss(const std::vector<double>& logits, std::size_t label);
double triplet_loss(const std::vector<double>& anchor, const std::vector<double>& positive,
                    const std::vector<double>& negative);
double negative_cosine(const std::vector<double>& p, const std::vector<double>& z);
double contrastive_value(const std::vector<double>& p1, const std::vector<double>& z1,
                         const std::vector<double>& p2, const std::vector<double>& z2);
double joint_value(double supervised, double contrastive, double lambda);

}  // namespace maskreid
