#pragma once

#include <functional>
#include <vector>

#include "maskreid/rng.hpp"
#include "maskreid/tape.hpp"

namespace maskreid::testing {

inline Tensor<double> random_tensor(std::size_t rows, std::size_t cols, Rng& rng,
                                    double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform_real(rng, lo, hi);
  return t;
}

/// Central finite differences of an arbitrary op against the tape's
/// analytic gradients. The op's output is contracted to a scalar with a
/// fixed random weighting so every output element contributes.
/// Returns the worst relative error across all input elements.
inline double fd_check(
    const std::vector<Tensor<double>>& inputs,
    const std::function<Var(Tape<double>&, const std::vector<Var>&)>& op,
    std::uint64_t seed = 99, double h = 1e-6) {
  // analytic pass
  Tape<double> tape(true);
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
  const Var y = op(tape, vars);
  Rng wrng = make_rng(seed);
  const Tensor<double> w =
      random_tensor(tape.val(y).rows(), tape.val(y).cols(), wrng, 0.25, 1.0);
  const Var loss = tape.sum_all(tape.mul(y, tape.leaf(w)));
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& g = tape.grad(vars[i]);
    grads.push_back(g.empty() ? Tensor<double>(inputs[i].rows(), inputs[i].cols()) : g);
  }

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t(false);
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.leaf(x));
    const Var yy = op(t, vs);
    return t.val(t.sum_all(t.mul(yy, t.leaf(w))))[0];
  };

  double worst = 0.0;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const double theta = xs[i][e];
      const double step = h * std::max(1.0, std::abs(theta));
      xs[i][e] = theta + step;
      const double up = eval(xs);
      xs[i][e] = theta - step;
      const double down = eval(xs);
      xs[i][e] = theta;
      const double fd = (up - down) / (2.0 * step);
      const double an = grads[i][e];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      worst = std::max(worst, rel);
    }
  return worst;
}

}  // namespace maskreid::testing
