#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "maskreid/rng.hpp"
#include "maskreid/tensor.hpp"

namespace maskreid {

template <typename T>
struct Param {
  Tensor<T> value;
  bool trainable = true;
  bool decay = true;  // weight-decay eligible (weights yes; biases/norms/embeddings no)
};

/// Named parameter tensors; iteration order is name order, which keeps
/// serialization and optimizer traversal deterministic.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, std::size_t rows, std::size_t cols,
                bool trainable = true, bool decay = true) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw std::logic_error("ParamStore: duplicate param " + name);
    it->second.value = Tensor<T>(rows, cols);
    it->second.trainable = trainable;
    it->second.decay = decay;
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no param " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no param " + name);
    return it->second;
  }

  std::map<std::string, Param<T>>& items() { return params_; }
  const std::map<std::string, Param<T>>& items() const { return params_; }

  std::size_t count() const { return params_.size(); }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) {
      auto& q = out.add(name, p.value.rows(), p.value.cols(), p.trainable, p.decay);
      q.value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::map<std::string, Param<T>> params_;
};

/// Truncated normal (+-2 sigma rejection), the embedding/projection init.
/// Each tensor draws from its own name-keyed stream so values do not
/// depend on creation order.
template <typename T>
void fill_trunc_normal(Tensor<T>& t, std::uint64_t seed, const std::string& name,
                       double stddev = 0.02) {
  Rng rng = make_rng(derive_seed(seed, "init", hash_str(name)));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = dist(rng);
    while (std::abs(v) > 2.0 * stddev) v = dist(rng);
    t[i] = static_cast<T>(v);
  }
}

// ------------------------------------------------------------- checkpoint --

/// Self-describing archive: 8-byte magic, u64 JSON header length, JSON
/// header (arrays directory + free-form metadata), then raw float32
/// little-endian tensor data. See docs/checkpoint.md.
void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const std::string& meta_json);

struct Checkpoint {
  ParamStore<float> store;
  std::string meta_json;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace maskreid
