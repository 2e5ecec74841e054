#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskreid/augment.hpp"
#include "maskreid/dataset.hpp"
#include "maskreid/encoder.hpp"
#include "maskreid/heads.hpp"
#include "maskreid/losses.hpp"

namespace maskreid {

struct TrainConfig {
  EncoderConfig encoder;
  HeadConfig heads;  // n_classes is filled from the dataset

  int epochs = 60;
  int batch_p = 4;  // identities per batch
  int batch_k = 4;  // images per identity
  double base_lr = 0.0125;
  double min_lr = -1.0;  // < 0 -> 0.002 * base_lr
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int warmup_epochs = 0;
  double lambda = 0.95;
  std::uint64_t seed = 0;

  // augmentation; negative/zero fields resolve against the encoder size
  double mask_ratio = 0.5;
  int mask_max_h = 0;  // 0 -> height / 2
  int mask_max_w = 0;  // 0 -> width
  int crop_pad = -1;   // < 0 -> round(10 * height / 256)
  double flip_p = 0.5;
  double erase_p = 0.5;
  double jitter_p = 0.8;
  double blur_p = 0.5;
  double solarize_p = 0.2;

  bool strong_branch = true;  // off + lambda=1 is the supervised-only ablation
  bool mine_per_stream = true;
  bool eval_concat_local = true;
  int checkpoint_interval = 0;  // epochs between checkpoints; 0 = end only

  double resolved_min_lr() const { return min_lr < 0 ? 0.002 * base_lr : min_lr; }
  NormalAugConfig resolved_normal_aug() const;
  StrongAugConfig resolved_strong_aug() const;
  void validate() const;
};

/// Cosine decay from base_lr at step 0 to min_lr at total_steps.
double cosine_lr(long step, long total_steps, double base_lr, double min_lr);

/// cosine_lr with an optional linear warmup prefix.
double schedule_lr(long step, long total_steps, long warmup_steps, double base_lr,
                   double min_lr);

template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> velocity;  // trainable params only
  long step = 0;
};

/// SGD with momentum and decoupled-from-nothing classic weight decay:
/// v <- momentum*v + grad + wd*param; param <- param - lr*v.
/// Frozen parameters and parameters absent from `grads` are untouched;
/// weight decay applies only to params flagged `decay`.
template <typename T>
void sgd_step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads,
              OptimizerState<T>& state, double lr, double momentum,
              double weight_decay) {
  for (auto& [name, p] : params.items()) {
    if (!p.trainable) continue;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor<T>& g = git->second;
    auto [vit, fresh] = state.velocity.try_emplace(name, p.value.rows(), p.value.cols());
    Tensor<T>& v = vit->second;
    const T wd = p.decay ? static_cast<T>(weight_decay) : T(0);
    const T mom = static_cast<T>(momentum);
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mom * v[i] + g[i] + wd * p.value[i];
      p.value[i] -= step * v[i];
    }
  }
  ++state.step;
}

/// Pre-augmented, patchified model inputs for one batch.
template <typename T>
struct BatchInputs {
  std::vector<Tensor<T>> patches_normal;
  std::vector<Tensor<T>> patches_strong;  // empty when the strong branch is off
  /// Optional precomputed patch embeddings (N x D). Only valid while the
  /// patch projection is frozen; the finite-difference harness uses this
  /// to avoid re-embedding constant inputs.
  std::vector<Tensor<T>> embedded_normal;
  std::vector<Tensor<T>> embedded_strong;
  std::vector<int> cameras;
  std::vector<int> labels;
  double mean_mask_fraction = 0.0;
};

struct GraphOptions {
  bool training = true;
  bool update_running = true;
  double lambda = 0.95;
  bool mine_per_stream = true;
  bool build_supervised = true;   // off: supervised term pinned to 0
  bool build_contrastive = true;  // off: contrastive term pinned to 0
  /// Frozen triplet plans (global then K locals); when set, mining is
  /// skipped, which makes the loss a pure function of the parameters.
  const std::vector<std::vector<Triplet>>* frozen_plan = nullptr;
};

template <typename T>
struct JointGraph {
  Var loss;
  Var supervised;
  Var contrastive;
  SupervisedTerms terms;
  Var features_global;              // B x D (invalid when supervised off)
  std::vector<Var> features_local;  // K entries of B x D
};

/// The dual-branch forward of one batch: both views run the same bound
/// parameters (weight sharing); the normal view feeds the supervised
/// heads, both views feed the projector/predictor for the stop-gradient
/// contrastive loss.
template <typename T>
JointGraph<T> build_joint_graph(Tape<T>& tape, BoundParams<T>& bp,
                                const EncoderConfig& ecfg, const HeadConfig& hcfg,
                                const BatchInputs<T>& in, const GraphOptions& opts) {
  const std::size_t batch =
      std::max(in.patches_normal.size(), in.embedded_normal.size());
  if (batch == 0) throw std::invalid_argument("build_joint_graph: empty batch");
  const bool strong = opts.build_contrastive &&
                      (!in.patches_strong.empty() || !in.embedded_strong.empty());
  const int k_groups = ecfg.jigsaw_groups;

  auto backbone = [&](std::size_t i, bool strong_view) {
    const auto& embedded = strong_view ? in.embedded_strong : in.embedded_normal;
    if (!embedded.empty())
      return forward_backbone_embedded(tape, bp, ecfg, tape.leaf(embedded[i]),
                                       in.cameras[i]);
    const auto& patches = strong_view ? in.patches_strong : in.patches_normal;
    return forward_backbone(tape, bp, ecfg, patches[i], in.cameras[i]);
  };

  std::vector<Var> cls_normal, cls_strong, global_rows;
  std::vector<std::vector<Var>> local_rows(k_groups);
  for (std::size_t i = 0; i < batch; ++i) {
    Var tokens = backbone(i, false);
    if (strong) cls_normal.push_back(tape.slice_rows(tokens, 0, 1));
    if (opts.build_supervised) {
      global_rows.push_back(global_branch(tape, bp, ecfg, tokens));
      std::vector<Var> locals = jigsaw_branch(tape, bp, ecfg, tokens);
      for (int s = 0; s < k_groups; ++s) local_rows[s].push_back(locals[s]);
    }
    if (strong) {
      Var tokens_s = backbone(i, true);
      cls_strong.push_back(tape.slice_rows(tokens_s, 0, 1));
    }
  }

  JointGraph<T> out;
  if (opts.build_supervised) {
    out.features_global = tape.concat_rows(global_rows);
    std::vector<Var> logits_local;
    Var logits_global = classify(tape, bp, hcfg, -1, out.features_global, opts.training,
                                 opts.update_running);
    for (int s = 0; s < k_groups; ++s) {
      out.features_local.push_back(tape.concat_rows(local_rows[s]));
      logits_local.push_back(classify(tape, bp, hcfg, s, out.features_local[s],
                                      opts.training, opts.update_running));
    }
    out.terms = supervised_loss(tape, out.features_global, logits_global,
                                out.features_local, logits_local, in.labels,
                                opts.mine_per_stream, opts.frozen_plan);
    out.supervised = out.terms.total;
  } else {
    out.supervised = tape.leaf(Tensor<T>(1, 1));  // constant zero
  }

  if (strong) {
    Var feat1 = tape.concat_rows(cls_normal);
    Var feat2 = tape.concat_rows(cls_strong);
    ProjectedPair pair1 = project_and_predict(tape, bp, hcfg, feat1, opts.training,
                                              opts.update_running);
    ProjectedPair pair2 = project_and_predict(tape, bp, hcfg, feat2, opts.training,
                                              opts.update_running);
    out.contrastive = contrastive_loss(tape, pair1.p, pair1.z, pair2.p, pair2.z);
  } else {
    out.contrastive = tape.leaf(Tensor<T>(1, 1));  // constant zero
  }
  out.loss = joint_loss(tape, out.supervised, out.contrastive, opts.lambda);
  return out;
}

struct StepStats {
  long step = 0;
  double lr = 0;
  double loss = 0;
  double id_global = 0;
  double id_local = 0;  // mean over the K local streams
  double tri_global = 0;
  double tri_local = 0;
  double contrastive = 0;
  double mask_fraction = 0;
};

/// Thrown when a step produces a non-finite loss or gradient.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

/// Augments one batch (resize to the encoder size, normal + strong
/// pipelines) with per-image derived RNG streams.
template <typename T>
BatchInputs<T> prepare_batch(const std::vector<PersonSample>& dataset,
                             const IdentityBatch& batch, const TrainConfig& cfg,
                             long step) {
  const NormalAugConfig normal_cfg = cfg.resolved_normal_aug();
  const StrongAugConfig strong_cfg = cfg.resolved_strong_aug();
  BatchInputs<T> in;
  double mask_sum = 0.0;
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    const PersonSample& s = dataset[batch.indices[i]];
    const ImageBuffer base =
        resize_bilinear(s.image, cfg.encoder.height, cfg.encoder.width);
    Rng rng_n = make_rng(derive_seed(cfg.seed, "aug-normal", step, i));
    in.patches_normal.push_back(
        patchify<T>(normal_pipeline(base, normal_cfg, rng_n), cfg.encoder));
    if (cfg.strong_branch) {
      Rng rng_s = make_rng(derive_seed(cfg.seed, "aug-strong", step, i));
      StrongAugResult strong = strong_pipeline(base, strong_cfg, rng_s);
      mask_sum += strong.mask.fraction();
      in.patches_strong.push_back(patchify<T>(strong.image, cfg.encoder));
    }
    in.cameras.push_back(s.camera);
    in.labels.push_back(s.identity);
  }
  if (cfg.strong_branch && !batch.indices.empty())
    in.mean_mask_fraction = mask_sum / static_cast<double>(batch.indices.size());
  return in;
}

/// One optimization step; throws TrainingDiverged on non-finite values.
template <typename T>
StepStats train_step(const std::vector<PersonSample>& dataset, const IdentityBatch& batch,
                     ParamStore<T>& params, OptimizerState<T>& opt,
                     const TrainConfig& cfg, long total_steps) {
  const long step = opt.step;
  BatchInputs<T> in = prepare_batch<T>(dataset, batch, cfg, step);

  Tape<T> tape;
  BoundParams<T> bp(tape, params);
  GraphOptions gopts;
  gopts.training = true;
  gopts.update_running = true;
  gopts.lambda = cfg.lambda;
  gopts.mine_per_stream = cfg.mine_per_stream;
  JointGraph<T> graph = build_joint_graph(tape, bp, cfg.encoder, cfg.heads, in, gopts);

  const double loss = tape.val(graph.loss)[0];
  tape.backward(graph.loss);
  std::map<std::string, Tensor<T>> grads = bp.collect_grads();

  double param_sq = 0, grad_sq = 0;
  bool grads_finite = true;
  for (const auto& [name, g] : grads) {
    grad_sq += g.squared_norm();
    grads_finite = grads_finite && g.all_finite();
  }
  for (const auto& [name, p] : params.items()) param_sq += p.value.squared_norm();
  if (!std::isfinite(loss) || !grads_finite)
    throw TrainingDiverged("non-finite loss/gradient at step " + std::to_string(step) +
                           " (loss=" + std::to_string(loss) +
                           ", param_norm=" + std::to_string(std::sqrt(param_sq)) +
                           ", grad_norm=" + std::to_string(std::sqrt(grad_sq)) + ")");

  const long warmup =
      static_cast<long>(cfg.warmup_epochs) *
      std::max<long>(1, total_steps / std::max(1, cfg.epochs));
  const double lr = schedule_lr(step, total_steps, warmup, cfg.base_lr,
                                cfg.resolved_min_lr());
  sgd_step(params, grads, opt, lr, cfg.momentum, cfg.weight_decay);

  StepStats stats;
  stats.step = step;
  stats.lr = lr;
  stats.loss = loss;
  stats.id_global = tape.val(graph.terms.id_global)[0];
  stats.tri_global = tape.val(graph.terms.tri_global)[0];
  double idl = 0, tril = 0;
  for (Var v : graph.terms.id_local) idl += tape.val(v)[0];
  for (Var v : graph.terms.tri_local) tril += tape.val(v)[0];
  const double k = std::max<std::size_t>(1, graph.terms.id_local.size());
  stats.id_local = idl / k;
  stats.tri_local = tril / k;
  stats.contrastive = tape.val(graph.contrastive)[0];
  stats.mask_fraction = in.mean_mask_fraction;
  return stats;
}

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  StepStats last;
  long steps = 0;
  int n_classes = 0;
};

std::string format_log_line(const StepStats& s);

/// Full training run: builds parameters, loops sample_batch over epochs,
/// writes the key=value log and the final checkpoint (plus optional
/// per-interval checkpoints). Checkpoints embed the resolved config.
TrainResult train(const std::vector<PersonSample>& dataset, TrainConfig cfg,
                  const std::string& run_dir, std::ostream* echo = nullptr);

}  // namespace maskreid
