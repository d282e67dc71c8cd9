#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nhmm/lattice.hpp"
#include "nhmm/model.hpp"

namespace nhmm {

// Normalized random potentials: prior and transition rows are log-softmax of
// scale * N(0,1) draws, emissions are scale * N(0,1).
LatticePotentials random_lattice(std::size_t num_nodes, std::size_t num_states, Rng& rng, double scale = 1.0);

struct GradCheckReport {
  double max_rel_error = 0.0;  // over entries whose absolute error exceeds the floor
  double max_abs_error = 0.0;
  std::string worst_entry;
  std::size_t checked = 0;
  std::size_t failed = 0;
  bool passed() const { return failed == 0; }
};

// |a - f| <= abs_floor, or |a - f| / max(|a|, |f|) <= rel_tol.
struct GradTolerance {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
};

/// Compares total_loss_grad against central differences of total_loss on
/// every scalar parameter.
GradCheckReport check_model_gradients(const ModelParams& params, const RowMatrix& frames, const ModelConfig& cfg,
                                      const GradTolerance& tol = {});

struct SelfcheckOptions {
  std::uint64_t seed = 1;
  int lattice_seeds = 100;
  // Mutation hook: negate xi before it is checked, to prove the suites bite.
  bool flip_xi_sign = false;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opts = {});

}  // namespace nhmm
