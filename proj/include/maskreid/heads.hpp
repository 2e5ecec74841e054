#pragma once

#include <string>
#include <vector>

#include "maskreid/nn.hpp"

namespace maskreid {

struct HeadConfig {
  int feature_dim = 32;  // D, mirrors the encoder dim
  int n_classes = 0;
  int proj_hidden = 4096;
  int proj_out = 256;
  int pred_hidden = 4096;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const {
    if (feature_dim < 1 || n_classes < 1 || proj_hidden < 1 || proj_out < 1 ||
        pred_hidden < 1)
      throw std::invalid_argument("HeadConfig: dims must be positive");
    if (bn_eps < 0) throw std::invalid_argument("HeadConfig: bn_eps must be >= 0");
  }
};

inline std::string stream_prefix(int stream) {
  return stream < 0 ? "heads/global" : "heads/local" + std::to_string(stream);
}

/// One BNNeck + classifier per supervised stream (global + K locals),
/// plus the shared projector/predictor pair of the contrastive branch.
template <typename T>
void add_head_params(ParamStore<T>& store, const HeadConfig& cfg, int jigsaw_groups) {
  cfg.validate();
  const int d = cfg.feature_dim;
  for (int s = -1; s < jigsaw_groups; ++s) {
    const std::string p = stream_prefix(s);
    add_batch_norm_params(store, p + "/bnneck", d);
    store.add(p + "/classifier/weight", d, cfg.n_classes, true, true);
    store.add(p + "/classifier/bias", 1, cfg.n_classes, true, false);
  }
  // projector: 3 linear layers, BN on every output, ReLU on hiddens only
  store.add("heads/projector/lin1/weight", d, cfg.proj_hidden, true, true);
  store.add("heads/projector/lin1/bias", 1, cfg.proj_hidden, true, false);
  add_batch_norm_params(store, "heads/projector/bn1", cfg.proj_hidden);
  store.add("heads/projector/lin2/weight", cfg.proj_hidden, cfg.proj_hidden, true, true);
  store.add("heads/projector/lin2/bias", 1, cfg.proj_hidden, true, false);
  add_batch_norm_params(store, "heads/projector/bn2", cfg.proj_hidden);
  store.add("heads/projector/lin3/weight", cfg.proj_hidden, cfg.proj_out, true, true);
  store.add("heads/projector/lin3/bias", 1, cfg.proj_out, true, false);
  add_batch_norm_params(store, "heads/projector/bn3", cfg.proj_out);
  // predictor: 2 linear layers, BN + ReLU on the hidden only
  store.add("heads/predictor/lin1/weight", cfg.proj_out, cfg.pred_hidden, true, true);
  store.add("heads/predictor/lin1/bias", 1, cfg.pred_hidden, true, false);
  add_batch_norm_params(store, "heads/predictor/bn1", cfg.pred_hidden);
  store.add("heads/predictor/lin2/weight", cfg.pred_hidden, cfg.proj_out, true, true);
  store.add("heads/predictor/lin2/bias", 1, cfg.proj_out, true, false);
}

template <typename T>
void init_head_params(ParamStore<T>& store, int jigsaw_groups, std::uint64_t seed) {
  for (int s = -1; s < jigsaw_groups; ++s) {
    const std::string p = stream_prefix(s);
    init_batch_norm_params(store, p + "/bnneck");
    fill_trunc_normal(store.at(p + "/classifier/weight").value, seed,
                      p + "/classifier/weight");
  }
  for (const char* name :
       {"heads/projector/lin1/weight", "heads/projector/lin2/weight",
        "heads/projector/lin3/weight", "heads/predictor/lin1/weight",
        "heads/predictor/lin2/weight"})
    fill_trunc_normal(store.at(name).value, seed, name);
  for (const char* bn : {"heads/projector/bn1", "heads/projector/bn2",
                         "heads/projector/bn3", "heads/predictor/bn1"})
    init_batch_norm_params(store, bn);
}

/// BNNeck then classifier for one stream: logits = W * bnneck(f) + b.
/// Training mode normalizes with batch statistics (optionally folding them
/// into the running stats); eval mode is a pure function of the stored
/// stats.
template <typename T>
Var classify(Tape<T>& tape, BoundParams<T>& bp, const HeadConfig& cfg, int stream,
             Var features, bool training, bool update_running = false) {
  const std::string p = stream_prefix(stream);
  Var neck = batch_norm(tape, bp, p + "/bnneck", features, training, update_running,
                        cfg.bn_eps, cfg.bn_momentum);
  return tape.linear(neck, bp(p + "/classifier/weight"), bp(p + "/classifier/bias"));
}

struct ProjectedPair {
  Var z;  // projector output
  Var p;  // predictor output
};

/// z = projector(f): Linear-BN-ReLU, Linear-BN-ReLU, Linear-BN;
/// p = predictor(z): Linear-BN-ReLU, Linear. Output layers carry no
/// nonlinearity.
template <typename T>
ProjectedPair project_and_predict(Tape<T>& tape, BoundParams<T>& bp,
                                  const HeadConfig& cfg, Var features, bool training,
                                  bool update_running = false) {
  const double eps = cfg.bn_eps, mom = cfg.bn_momentum;
  Var h = tape.linear(features, bp("heads/projector/lin1/weight"),
                      bp("heads/projector/lin1/bias"));
  h = batch_norm(tape, bp, "heads/projector/bn1", h, training, update_running, eps, mom);
  h = tape.relu(h);
  h = tape.linear(h, bp("heads/projector/lin2/weight"), bp("heads/projector/lin2/bias"));
  h = batch_norm(tape, bp, "heads/projector/bn2", h, training, update_running, eps, mom);
  h = tape.relu(h);
  h = tape.linear(h, bp("heads/projector/lin3/weight"), bp("heads/projector/lin3/bias"));
  Var z = batch_norm(tape, bp, "heads/projector/bn3", h, training, update_running, eps, mom);

  Var g = tape.linear(z, bp("heads/predictor/lin1/weight"), bp("heads/predictor/lin1/bias"));
  g = batch_norm(tape, bp, "heads/predictor/bn1", g, training, update_running, eps, mom);
  g = tape.relu(g);
  Var p = tape.linear(g, bp("heads/predictor/lin2/weight"), bp("heads/predictor/lin2/bias"));
  return {z, p};
}

}  // namespace maskreid
