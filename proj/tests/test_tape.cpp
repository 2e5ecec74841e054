#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "testing.hpp"

using namespace maskreid;
using maskreid::testing::fd_check;
using maskreid::testing::random_tensor;

namespace {
Rng rng = make_rng(4242);
constexpr double kTol = 1e-7;
}  // namespace

TEST_CASE("linear forward and gradients") {
  const auto x = random_tensor(3, 4, rng);
  const auto w = random_tensor(4, 5, rng);
  const auto b = random_tensor(1, 5, rng);

  Tape<double> t(false);
  const auto& y = t.val(t.linear(t.leaf(x), t.leaf(w), t.leaf(b)));
  double manual = b(0, 2);
  for (std::size_t p = 0; p < 4; ++p) manual += x(1, p) * w(p, 2);
  CHECK(y(1, 2) == doctest::Approx(manual).epsilon(1e-12));

  CHECK(fd_check({x, w, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.linear(v[0], v[1], v[2]);
        }) < kTol);
}

TEST_CASE("matmul_nt gradients") {
  const auto a = random_tensor(3, 4, rng);
  const auto b = random_tensor(5, 4, rng);
  CHECK(fd_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.matmul_nt(v[0], v[1]);
        }) < kTol);
}

TEST_CASE("elementwise ops gradients") {
  const auto a = random_tensor(3, 4, rng);
  const auto b = random_tensor(3, 4, rng);
  CHECK(fd_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.add(v[0], v[1]);
        }) < kTol);
  CHECK(fd_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.sub(v[0], v[1]);
        }) < kTol);
  CHECK(fd_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.mul(v[0], v[1]);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.mul(v[0], v[0]);  // both parents alias one node
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.mul_scalar(v[0], -2.5);
        }) < kTol);
}

TEST_CASE("broadcast, reduction and restructuring gradients") {
  const auto a = random_tensor(4, 3, rng);
  const auto r = random_tensor(1, 3, rng);
  CHECK(fd_check({a, r}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.add_rowvec(v[0], v[1]);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.mean_rows(v[0]);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.row_sums(v[0]);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.mean_all(v[0]);
        }) < kTol);
  const auto b = random_tensor(2, 3, rng);
  CHECK(fd_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.concat_rows({v[0], v[1]});
        }) < kTol);
  const auto c = random_tensor(4, 2, rng);
  CHECK(fd_check({a, c}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.concat_cols({v[0], v[1]});
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.slice_rows(v[0], 1, 2);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.slice_cols(v[0], 1, 2);
        }) < kTol);
  // duplicate indices must accumulate
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.gather_rows(v[0], {2, 0, 2, 3});
        }) < kTol);
}

TEST_CASE("nonlinearity gradients") {
  const auto a = random_tensor(3, 5, rng);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.gelu(v[0]);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.softplus(v[0]);
        }) < kTol);
  CHECK(fd_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.softmax_rows(v[0]);
        }) < kTol);
  // keep clear of the ReLU kink so finite differences are valid
  auto pos = a;
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (std::abs(pos[i]) < 0.05) pos[i] = 0.1;
  CHECK(fd_check({pos}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.relu(v[0]);
        }) < kTol);
}

TEST_CASE("normalization gradients") {
  const auto x = random_tensor(4, 6, rng);
  const auto gamma = random_tensor(1, 6, rng, 0.5, 1.5);
  const auto beta = random_tensor(1, 6, rng);
  CHECK(fd_check({x, gamma, beta}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.layer_norm_rows(v[0], v[1], v[2], 1e-6);
        }) < kTol);
  CHECK(fd_check({x, gamma, beta}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.batch_norm_cols(v[0], v[1], v[2], 1e-5);
        }) < kTol);

  Rng r2 = make_rng(7);
  const auto mean = random_tensor(1, 6, r2, -0.2, 0.2);
  const auto var = random_tensor(1, 6, r2, 0.5, 1.5);
  CHECK(fd_check({x, gamma, beta}, [&](Tape<double>& t, const std::vector<Var>& v) {
          return t.batch_norm_eval(v[0], v[1], v[2], mean, var, 1e-5);
        }) < kTol);
}

TEST_CASE("attention head value matches composed softmax") {
  const auto q = random_tensor(5, 4, rng);
  const auto k = random_tensor(5, 4, rng);
  const auto v = random_tensor(5, 4, rng);
  const double scale = 0.5;

  Tape<double> t(false);
  const auto& fused = t.val(t.attention_head(t.leaf(q), t.leaf(k), t.leaf(v), scale));
  const Var s = t.mul_scalar(t.matmul_nt(t.leaf(q), t.leaf(k)), scale);
  const auto& composed = t.val(t.matmul(t.softmax_rows(s), t.leaf(v)));
  for (std::size_t i = 0; i < fused.size(); ++i)
    CHECK(fused[i] == doctest::Approx(composed[i]).epsilon(1e-12));

  CHECK(fd_check({q, k, v}, [scale](Tape<double>& t, const std::vector<Var>& vars) {
          return t.attention_head(vars[0], vars[1], vars[2], scale);
        }) < kTol);
}

TEST_CASE("cross entropy values and gradients") {
  Tape<double> t(false);
  Tensor<double> uniform(1, 10);
  const auto& ce = t.val(t.cross_entropy_rows(t.leaf(uniform), {3}));
  CHECK(ce[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // large-logit stabilization
  Tensor<double> big(1, 2);
  big(0, 0) = 1000.0;
  const auto& stable = t.val(t.cross_entropy_rows(t.leaf(big), {0}));
  CHECK(std::isfinite(stable[0]));
  CHECK(stable[0] == doctest::Approx(0.0).epsilon(1e-12));

  const auto logits = random_tensor(4, 6, rng, -3.0, 3.0);
  CHECK(fd_check({logits}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.cross_entropy_rows(v[0], {1, 5, 0, 3});
        }) < kTol);
}

TEST_CASE("negative cosine rows") {
  const auto p = random_tensor(3, 5, rng);
  const auto z = random_tensor(3, 5, rng);
  CHECK(fd_check({p, z}, [](Tape<double>& t, const std::vector<Var>& v) {
          return t.neg_cosine_rows(v[0], v[1]);
        }) < kTol);

  Tape<double> t(false);
  const auto& self = t.val(t.neg_cosine_rows(t.leaf(p), t.leaf(p)));
  for (std::size_t i = 0; i < self.rows(); ++i)
    CHECK(self(i, 0) == doctest::Approx(-1.0).epsilon(1e-12));

  Tensor<double> zero(3, 5);
  CHECK_THROWS_AS((void)t.neg_cosine_rows(t.leaf(zero), t.leaf(p)),
                  std::domain_error);
}

TEST_CASE("stop_gradient blocks the backward path") {
  const auto x = random_tensor(2, 3, rng);
  Tape<double> t(true);
  const Var leaf = t.leaf(x, true);
  const Var through = t.mul_scalar(leaf, 3.0);
  const Var stopped = t.stop_gradient(through);
  const Var loss = t.sum_all(t.mul(stopped, stopped));
  t.backward(loss);
  CHECK(t.grad(leaf).empty());  // nothing flowed back

  // a mixed path: only the live branch contributes
  Tape<double> t2(true);
  const Var leaf2 = t2.leaf(x, true);
  const Var live = t2.mul_scalar(leaf2, 2.0);
  const Var dead = t2.stop_gradient(leaf2);
  const Var loss2 = t2.sum_all(t2.add(live, dead));
  t2.backward(loss2);
  const Tensor<double>& g = t2.grad(leaf2);
  REQUIRE(!g.empty());
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("grad-disabled tape computes values only") {
  Tape<double> t(false);
  const auto x = random_tensor(2, 2, rng);
  const Var leaf = t.leaf(x, true);
  const Var y = t.mul(leaf, leaf);
  CHECK(t.val(y)(0, 0) == doctest::Approx(x(0, 0) * x(0, 0)));
  CHECK(t.grad(y).empty());
}
