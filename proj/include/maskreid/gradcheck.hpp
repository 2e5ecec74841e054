#pragma once

#include <string>
#include <vector>

#include "maskreid/trainer.hpp"

namespace maskreid {

/// Finite-difference verification of the analytic gradients at float64.
/// The batch (augmented views) and the triplet mining plan are frozen so
/// every objective is a pure function of the parameters.
struct GradCheckConfig {
  EncoderConfig encoder;  // filled by toy_gradcheck_config()
  HeadConfig heads;
  int batch_p = 2;
  int batch_k = 2;
  double lambda = 0.95;
  double fd_step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 13;
  int threads = 0;  // 0 = hardware concurrency
};

/// D=32, l=4, heads=4, K=2 with small MLP/projector widths.
GradCheckConfig toy_gradcheck_config();

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // scalar parameters swept
};

struct EquationReport {
  std::string name;
  double value = 0.0;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  bool pass = false;
  std::vector<GradCheckGroup> groups;
};

struct GradCheckReport {
  std::vector<EquationReport> equations;  // triplet, supervised, contrastive, joint
  bool frozen_patch_projection_intact = false;
  bool pass = false;
  double seconds = 0.0;

  std::string summary() const;
};

GradCheckReport run_gradcheck(const GradCheckConfig& cfg);

}  // namespace maskreid
