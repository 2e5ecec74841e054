#include "maskreid/trainer.hpp"

#include "maskreid/config.hpp"

#include <algorithm>
#include <cstdio>
#include <numbers>

namespace maskreid {

NormalAugConfig TrainConfig::resolved_normal_aug() const {
  NormalAugConfig out;
  out.flip_p = flip_p;
  out.erase_p = erase_p;
  out.pad = crop_pad >= 0
                ? crop_pad
                : static_cast<int>(std::lround(10.0 * encoder.height / 256.0));
  return out;
}

StrongAugConfig TrainConfig::resolved_strong_aug() const {
  StrongAugConfig out;
  out.jitter_p = jitter_p;
  out.blur_p = blur_p;
  out.solarize_p = solarize_p;
  out.mask.ratio = mask_ratio;
  out.mask.max_height = mask_max_h > 0 ? mask_max_h : std::max(1, encoder.height / 2);
  out.mask.max_width = mask_max_w > 0 ? mask_max_w : encoder.width;
  return out;
}

void TrainConfig::validate() const {
  encoder.validate();
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_p < 2 || batch_k < 2)
    throw std::invalid_argument("TrainConfig: need P >= 2 and K >= 2 for triplet mining");
  if (!(base_lr > 0)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
  if (weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (lambda < 0 || lambda > 1)
    throw std::invalid_argument("TrainConfig: lambda must be in [0,1]");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw std::invalid_argument("TrainConfig: warmup_epochs must be in [0, epochs)");
  resolved_strong_aug().validate(encoder.height, encoder.width);
}

double cosine_lr(long step, long total_steps, double base_lr, double min_lr) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

double schedule_lr(long step, long total_steps, long warmup_steps, double base_lr,
                   double min_lr) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  return cosine_lr(step - warmup_steps, std::max<long>(1, total_steps - warmup_steps),
                   base_lr, min_lr);
}

std::string format_log_line(const StepStats& s) {
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "step=%ld id_global=%.6g id_local=%.6g tri_global=%.6g tri_local=%.6g "
                "contrast=%.6g loss=%.6g lr=%.8g mask_fraction=%.4f",
                s.step, s.id_global, s.id_local, s.tri_global, s.tri_local,
                s.contrastive, s.loss, s.lr, s.mask_fraction);
  return buf;
}

TrainResult train(const std::vector<PersonSample>& dataset, TrainConfig cfg,
                  const std::string& run_dir, std::ostream* echo) {
  namespace fs = std::filesystem;

  std::size_t usable = 0;
  int max_label = -1, max_camera = -1;
  for (const PersonSample& s : dataset)
    if (!s.is_junk) {
      ++usable;
      max_label = std::max(max_label, s.identity);
      max_camera = std::max(max_camera, s.camera);
    }
  if (usable == 0) throw std::invalid_argument("train: dataset has no usable samples");

  cfg.encoder.n_cameras = std::max(cfg.encoder.n_cameras, max_camera + 1);
  cfg.heads.feature_dim = cfg.encoder.dim;
  cfg.heads.n_classes = max_label + 1;
  cfg.validate();
  cfg.heads.validate();

  ParamStore<float> params;
  add_encoder_params(params, cfg.encoder);
  add_head_params(params, cfg.heads, cfg.encoder.jigsaw_groups);
  init_encoder_params(params, cfg.encoder, cfg.seed);
  init_head_params(params, cfg.encoder.jigsaw_groups, cfg.seed);

  BatchSampler sampler(dataset, cfg.batch_p, cfg.batch_k, cfg.seed);
  const long batch_size = static_cast<long>(cfg.batch_p) * cfg.batch_k;
  const long steps_per_epoch =
      std::max<long>(1, (static_cast<long>(usable) + batch_size - 1) / batch_size);
  const long total_steps = steps_per_epoch * cfg.epochs;

  fs::create_directories(run_dir);
  TrainResult result;
  result.n_classes = cfg.heads.n_classes;
  result.log_path = (fs::path(run_dir) / "train.log").string();
  result.checkpoint_path = (fs::path(run_dir) / "checkpoint.ckpt").string();
  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("train: cannot open log " + result.log_path);

  const std::string meta_json = train_meta_json(cfg, cfg.heads.n_classes);

  OptimizerState<float> opt;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (long i = 0; i < steps_per_epoch; ++i) {
      const IdentityBatch batch = sampler.next();
      result.last = train_step(dataset, batch, params, opt, cfg, total_steps);
      log << format_log_line(result.last) << "\n";
      if (echo) *echo << format_log_line(result.last) << "\n";
    }
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
        epoch + 1 < cfg.epochs) {
      const std::string path =
          (fs::path(run_dir) / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt"))
              .string();
      save_checkpoint(path, params, meta_json);
    }
  }
  result.steps = opt.step;
  log.flush();
  save_checkpoint(result.checkpoint_path, params, meta_json);
  return result;
}

}  // namespace maskreid
