#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "maskreid/heads.hpp"
#include "testing.hpp"

using namespace maskreid;
using maskreid::testing::random_tensor;

namespace {

void set_identity(Tensor<double>& w) {
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = i == j ? 1.0 : 0.0;
}

ParamStore<double> head_store(const HeadConfig& cfg, int k, std::uint64_t seed) {
  ParamStore<double> store;
  add_head_params(store, cfg, k);
  init_head_params(store, k, seed);
  return store;
}

}  // namespace

TEST_CASE("identity-initialized heads compose to the identity") {
  HeadConfig cfg;
  cfg.feature_dim = 6;
  cfg.n_classes = 2;
  cfg.proj_hidden = 6;
  cfg.proj_out = 6;
  cfg.pred_hidden = 6;
  cfg.bn_eps = 0.0;  // running stats (0,1) make eval-mode BN exact identity
  auto store = head_store(cfg, 1, 5);
  for (const char* lin : {"heads/projector/lin1/weight", "heads/projector/lin2/weight",
                          "heads/projector/lin3/weight", "heads/predictor/lin1/weight",
                          "heads/predictor/lin2/weight"})
    set_identity(store.at(lin).value);

  Rng rng = make_rng(2);
  const Tensor<double> f = random_tensor(3, 6, rng, 0.05, 1.0);
  Tape<double> tape(false);
  BoundParams<double> bp(tape, store);
  const ProjectedPair pair = project_and_predict(tape, bp, cfg, tape.leaf(f),
                                                 /*training=*/false);
  CHECK(tape.val(pair.z) == f);
  CHECK(tape.val(pair.p) == f);
}

TEST_CASE("zero input with zero biases projects to zero") {
  HeadConfig cfg;
  cfg.feature_dim = 4;
  cfg.n_classes = 2;
  cfg.proj_hidden = 8;
  cfg.proj_out = 4;
  cfg.pred_hidden = 8;
  auto store = head_store(cfg, 1, 6);

  Tape<double> tape(false);
  BoundParams<double> bp(tape, store);
  const Tensor<double> zero(3, 4);
  const ProjectedPair pair = project_and_predict(tape, bp, cfg, tape.leaf(zero),
                                                 /*training=*/true);
  const Tensor<double>& z = tape.val(pair.z);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("tiny projector matches a hand-rolled reference MLP") {
  HeadConfig cfg;
  cfg.feature_dim = 8;
  cfg.n_classes = 2;
  cfg.proj_hidden = 16;
  cfg.proj_out = 4;
  cfg.pred_hidden = 16;
  auto store = head_store(cfg, 1, 9);
  Rng rng = make_rng(31);
  for (const char* name : {"heads/projector/lin1/bias", "heads/projector/lin2/bias",
                           "heads/projector/lin3/bias"}) {
    auto& b = store.at(name).value;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = uniform_real(rng, -0.2, 0.2);
  }

  const Tensor<double> f = random_tensor(5, 8, rng);
  Tape<double> tape(false);
  BoundParams<double> bp(tape, store);
  const ProjectedPair pair = project_and_predict(tape, bp, cfg, tape.leaf(f),
                                                 /*training=*/true);

  // reference: linear -> train-mode BN -> relu, twice, then linear -> BN
  auto ref_linear = [&](const std::vector<std::vector<double>>& x,
                        const std::string& prefix) {
    const auto& w = store.at(prefix + "/weight").value;
    const auto& b = store.at(prefix + "/bias").value;
    std::vector<std::vector<double>> y(x.size(), std::vector<double>(w.cols(), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t jj = 0; jj < w.cols(); ++jj) {
        double acc = b(0, jj);
        for (std::size_t kk = 0; kk < w.rows(); ++kk) acc += x[i][kk] * w(kk, jj);
        y[i][jj] = acc;
      }
    return y;
  };
  auto ref_bn = [&](std::vector<std::vector<double>> x, const std::string& prefix,
                    bool relu) {
    const auto& gamma = store.at(prefix + "/gamma").value;
    const auto& beta = store.at(prefix + "/beta").value;
    for (std::size_t j = 0; j < x[0].size(); ++j) {
      double mean = 0, var = 0;
      for (const auto& row : x) mean += row[j];
      mean /= x.size();
      for (const auto& row : x) var += (row[j] - mean) * (row[j] - mean);
      var /= x.size();
      for (auto& row : x) {
        row[j] = (row[j] - mean) / std::sqrt(var + cfg.bn_eps) * gamma(0, j) + beta(0, j);
        if (relu) row[j] = std::max(row[j], 0.0);
      }
    }
    return x;
  };

  std::vector<std::vector<double>> x(5, std::vector<double>(8));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) x[i][j] = f(i, j);
  auto ref = ref_bn(ref_linear(x, "heads/projector/lin1"), "heads/projector/bn1", true);
  ref = ref_bn(ref_linear(ref, "heads/projector/lin2"), "heads/projector/bn2", true);
  ref = ref_bn(ref_linear(ref, "heads/projector/lin3"), "heads/projector/bn3", false);

  const Tensor<double>& z = tape.val(pair.z);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j)
      CHECK(z(i, j) == doctest::Approx(ref[i][j]).epsilon(1e-6));
}

TEST_CASE("classifier value contracts") {
  HeadConfig cfg;
  cfg.feature_dim = 4;
  cfg.n_classes = 4;

  SUBCASE("identity classifier with bypassed bnneck") {
    HeadConfig exact = cfg;
    exact.bn_eps = 0.0;  // running stats (0,1) then normalize to the identity
    auto store = head_store(exact, 0, 3);
    set_identity(store.at("heads/global/classifier/weight").value);
    Rng rng = make_rng(4);
    const Tensor<double> f = random_tensor(2, 4, rng);
    Tape<double> tape(false);
    BoundParams<double> bp(tape, store);
    const auto& logits =
        tape.val(classify(tape, bp, exact, -1, tape.leaf(f), /*training=*/false));
    CHECK(logits == f);
  }

  SUBCASE("zero feature and zero bias give uniform logits") {
    auto store = head_store(cfg, 0, 3);  // default eps guards the zero batch
    Tape<double> tape(false);
    BoundParams<double> bp(tape, store);
    const Tensor<double> zero(3, 4);
    const auto& logits =
        tape.val(classify(tape, bp, cfg, -1, tape.leaf(zero), /*training=*/true));
    for (std::size_t i = 0; i < logits.rows(); ++i)
      for (std::size_t j = 0; j < logits.cols(); ++j)
        CHECK(logits(i, j) == logits(i, 0));
  }

  SUBCASE("hand-set weights match the manual product") {
    HeadConfig c3 = cfg;
    c3.n_classes = 3;
    c3.bn_eps = 0.0;  // make the neck an exact identity at fresh stats
    auto s3 = head_store(c3, 0, 7);
    auto& w = s3.at("heads/global/classifier/weight").value;  // 4 x 3
    auto& b = s3.at("heads/global/classifier/bias").value;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * (i + 1);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = -0.05 * (i + 1);
    Tensor<double> f(1, 4);
    for (int i = 0; i < 4; ++i) f(0, i) = i + 1;
    Tape<double> tape(false);
    BoundParams<double> bp(tape, s3);
    const auto& logits =
        tape.val(classify(tape, bp, c3, -1, tape.leaf(f), /*training=*/false));
    for (int j = 0; j < 3; ++j) {
      double manual = b(0, j);
      for (int i = 0; i < 4; ++i) manual += f(0, i) * w(i, j);
      CHECK(logits(0, j) == doctest::Approx(manual).epsilon(1e-12));
    }
  }
}

TEST_CASE("batch-norm mode semantics") {
  HeadConfig cfg;
  cfg.feature_dim = 3;
  cfg.n_classes = 2;
  auto store = head_store(cfg, 0, 13);
  Rng rng = make_rng(6);
  const Tensor<double> f = random_tensor(8, 3, rng);

  SUBCASE("eval mode is pure") {
    const Tensor<double> mean_before = store.at("heads/global/bnneck/running_mean").value;
    Tape<double> tape(false);
    BoundParams<double> bp(tape, store);
    const auto a = tape.val(classify(tape, bp, cfg, -1, tape.leaf(f), false));
    const auto b = tape.val(classify(tape, bp, cfg, -1, tape.leaf(f), false));
    CHECK(a == b);
    CHECK(store.at("heads/global/bnneck/running_mean").value == mean_before);
  }

  SUBCASE("train mode folds batch stats into running stats by the momentum") {
    const Tensor<double> mean_before = store.at("heads/global/bnneck/running_mean").value;
    Tape<double> tape(false);
    BoundParams<double> bp(tape, store);
    (void)tape.val(classify(tape, bp, cfg, -1, tape.leaf(f), true, true));
    const auto& mean_after = store.at("heads/global/bnneck/running_mean").value;
    for (std::size_t j = 0; j < 3; ++j) {
      double batch_mean = 0;
      for (std::size_t i = 0; i < f.rows(); ++i) batch_mean += f(i, j);
      batch_mean /= f.rows();
      const double expect =
          (1.0 - cfg.bn_momentum) * mean_before(0, j) + cfg.bn_momentum * batch_mean;
      CHECK(mean_after(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("head gradients match finite differences") {
  HeadConfig cfg;
  cfg.feature_dim = 6;
  cfg.n_classes = 3;
  cfg.proj_hidden = 10;
  cfg.proj_out = 5;
  cfg.pred_hidden = 10;
  auto store = head_store(cfg, 0, 23);
  Rng rng = make_rng(12);
  const Tensor<double> f = random_tensor(6, 6, rng);
  const Tensor<double> wz = random_tensor(6, 5, rng, 0.25, 1.0);
  const Tensor<double> wp = random_tensor(6, 5, rng, 0.25, 1.0);
  const Tensor<double> wl = random_tensor(6, 3, rng, 0.25, 1.0);

  // scalar objective touching projector, predictor and classifier
  auto eval = [&](ParamStore<double>& params, bool with_grads,
                  std::map<std::string, Tensor<double>>* grads) {
    Tape<double> tape(with_grads);
    BoundParams<double> bp(tape, params);
    const Var feat = tape.leaf(f);
    const ProjectedPair pair = project_and_predict(tape, bp, cfg, feat, true);
    const Var logits = classify(tape, bp, cfg, -1, feat, true);
    Var loss = tape.sum_all(tape.mul(pair.z, tape.leaf(wz)));
    loss = tape.add(loss, tape.sum_all(tape.mul(pair.p, tape.leaf(wp))));
    loss = tape.add(loss, tape.sum_all(tape.mul(logits, tape.leaf(wl))));
    const double value = tape.val(loss)[0];
    if (with_grads) {
      tape.backward(loss);
      *grads = bp.collect_grads();
    }
    return value;
  };

  std::map<std::string, Tensor<double>> grads;
  eval(store, true, &grads);

  double worst = 0;
  for (auto& [name, p] : store.items()) {
    if (!p.trainable) continue;
    REQUIRE(grads.count(name) == 1);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double theta = p.value[i];
      const double h = 1e-6 * std::max(1.0, std::abs(theta));
      p.value[i] = theta + h;
      const double up = eval(store, false, nullptr);
      p.value[i] = theta - h;
      const double down = eval(store, false, nullptr);
      p.value[i] = theta;
      const double fd = (up - down) / (2 * h);
      const double an = grads.at(name)[i];
      worst = std::max(worst,
                       std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0}));
    }
  }
  CHECK(worst < 1e-4);
}
