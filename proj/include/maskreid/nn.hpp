#pragma once

#include <map>
#include <string>
#include <vector>

#include "maskreid/params.hpp"
#include "maskreid/tape.hpp"

namespace maskreid {

/// Binds ParamStore entries to tape leaves, one leaf per name per graph.
/// Both branches and all head streams bind through the same object, which
/// is what makes the weight sharing structural: a parameter appears in the
/// graph exactly once and accumulates gradients from every consumer.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, ParamStore<T>& store) : tape_(tape), store_(store) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Param<T>& p = store_.at(name);
    const Var v = tape_.leaf(p.value, p.trainable);
    bound_.emplace(name, v);
    return v;
  }

  ParamStore<T>& store() { return store_; }

  /// Gradients of every bound trainable parameter after backward().
  std::map<std::string, Tensor<T>> collect_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, var] : bound_) {
      if (!store_.at(name).trainable) continue;
      const Tensor<T>& g = tape_.grad(var);
      out.emplace(name, g.empty() ? Tensor<T>(tape_.val(var).rows(), tape_.val(var).cols())
                                  : g);
    }
    return out;
  }

 private:
  Tape<T>& tape_;
  ParamStore<T>& store_;
  std::map<std::string, Var> bound_;
};

inline constexpr double kLayerNormEps = 1e-6;

/// Adds the parameter set of one pre-norm transformer block under `prefix`.
template <typename T>
void add_block_params(ParamStore<T>& store, const std::string& prefix, int dim,
                      int mlp_hidden) {
  store.add(prefix + "/ln1/gamma", 1, dim, true, false);
  store.add(prefix + "/ln1/beta", 1, dim, true, false);
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    store.add(prefix + "/attn/" + std::string(w), dim, dim, true, true);
    store.add(prefix + "/attn/b" + std::string(w + 1), 1, dim, true, false);
  }
  store.add(prefix + "/ln2/gamma", 1, dim, true, false);
  store.add(prefix + "/ln2/beta", 1, dim, true, false);
  store.add(prefix + "/mlp/w1", dim, mlp_hidden, true, true);
  store.add(prefix + "/mlp/b1", 1, mlp_hidden, true, false);
  store.add(prefix + "/mlp/w2", mlp_hidden, dim, true, true);
  store.add(prefix + "/mlp/b2", 1, dim, true, false);
}

template <typename T>
void init_block_params(ParamStore<T>& store, const std::string& prefix,
                       std::uint64_t seed) {
  for (const char* w : {"attn/wq", "attn/wk", "attn/wv", "attn/wo", "mlp/w1", "mlp/w2"}) {
    const std::string name = prefix + "/" + w;
    fill_trunc_normal(store.at(name).value, seed, name);
  }
  for (const char* g : {"ln1/gamma", "ln2/gamma"}) {
    Tensor<T>& t = store.at(prefix + "/" + g).value;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(1);
  }
}

/// Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)).
template <typename T>
Var transformer_block(Tape<T>& tape, BoundParams<T>& bp, const std::string& prefix,
                      Var x, int heads) {
  const int dim = static_cast<int>(tape.val(x).cols());
  if (dim % heads != 0) throw std::invalid_argument("transformer_block: dim % heads != 0");
  const int head_dim = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  Var h = tape.layer_norm_rows(x, bp(prefix + "/ln1/gamma"), bp(prefix + "/ln1/beta"),
                               T(kLayerNormEps));
  Var q = tape.linear(h, bp(prefix + "/attn/wq"), bp(prefix + "/attn/bq"));
  Var k = tape.linear(h, bp(prefix + "/attn/wk"), bp(prefix + "/attn/bk"));
  Var v = tape.linear(h, bp(prefix + "/attn/wv"), bp(prefix + "/attn/bv"));
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (int i = 0; i < heads; ++i) {
    const std::size_t c0 = static_cast<std::size_t>(i) * head_dim;
    head_outs.push_back(tape.attention_head(tape.slice_cols(q, c0, head_dim),
                                            tape.slice_cols(k, c0, head_dim),
                                            tape.slice_cols(v, c0, head_dim), scale));
  }
  Var attn = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
  x = tape.add(x, tape.linear(attn, bp(prefix + "/attn/wo"), bp(prefix + "/attn/bo")));

  Var h2 = tape.layer_norm_rows(x, bp(prefix + "/ln2/gamma"), bp(prefix + "/ln2/beta"),
                                T(kLayerNormEps));
  Var m = tape.linear(h2, bp(prefix + "/mlp/w1"), bp(prefix + "/mlp/b1"));
  m = tape.gelu(m);
  m = tape.linear(m, bp(prefix + "/mlp/w2"), bp(prefix + "/mlp/b2"));
  return tape.add(x, m);
}

/// Batch normalization with running-statistics bookkeeping. In training
/// mode normalizes with batch moments and (optionally) folds them into the
/// running stats; in eval mode normalizes with the stored running stats.
template <typename T>
Var batch_norm(Tape<T>& tape, BoundParams<T>& bp, const std::string& prefix, Var x,
               bool training, bool update_running, double eps, double momentum) {
  ParamStore<T>& store = bp.store();
  if (!training)
    return tape.batch_norm_eval(x, bp(prefix + "/gamma"), bp(prefix + "/beta"),
                                store.at(prefix + "/running_mean").value,
                                store.at(prefix + "/running_var").value, T(eps));

  Var y = tape.batch_norm_cols(x, bp(prefix + "/gamma"), bp(prefix + "/beta"), T(eps));
  if (update_running) {
    const Tensor<T>& xv = tape.val(x);
    const std::size_t n = xv.rows();
    Tensor<T>& rmean = store.at(prefix + "/running_mean").value;
    Tensor<T>& rvar = store.at(prefix + "/running_var").value;
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      T mean = T(0), var = T(0);
      for (std::size_t i = 0; i < n; ++i) mean += xv(i, j);
      mean /= static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = xv(i, j) - mean;
        var += d * d;
      }
      // unbiased variance for the running estimate
      var /= static_cast<T>(n > 1 ? n - 1 : 1);
      rmean(0, j) = static_cast<T>((1.0 - momentum) * rmean(0, j) + momentum * mean);
      rvar(0, j) = static_cast<T>((1.0 - momentum) * rvar(0, j) + momentum * var);
    }
  }
  return y;
}

template <typename T>
void add_batch_norm_params(ParamStore<T>& store, const std::string& prefix, int dim) {
  store.add(prefix + "/gamma", 1, dim, true, false);
  store.add(prefix + "/beta", 1, dim, true, false);
  store.add(prefix + "/running_mean", 1, dim, false, false);
  store.add(prefix + "/running_var", 1, dim, false, false);
}

template <typename T>
void init_batch_norm_params(ParamStore<T>& store, const std::string& prefix) {
  Tensor<T>& g = store.at(prefix + "/gamma").value;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = T(1);
  Tensor<T>& rv = store.at(prefix + "/running_var").value;
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] = T(1);
}

}  // namespace maskreid
