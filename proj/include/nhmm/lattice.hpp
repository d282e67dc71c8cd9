#pragma once

#include <cstddef>
#include <vector>

#include "nhmm/numerics.hpp"

namespace nhmm {

// Normalized log-potentials of one linear chain with M nodes over N states.
// Transition block m (0 <= m < M-1) links node m to node m+1 and is stored
// row-major: trans[m * N * N + i * N + j] = log p(z_{m+1} = j | z_m = i).
struct LatticePotentials {
  std::size_t num_nodes = 0;
  std::size_t num_states = 0;
  std::vector<double> prior;  // N
  std::vector<double> trans;  // (M-1) * N * N
  std::vector<double> emit;   // M * N

  LatticePotentials() = default;
  LatticePotentials(std::size_t m, std::size_t n)
      : num_nodes(m), num_states(n), prior(n, 0.0), trans((m > 0 ? m - 1 : 0) * n * n, 0.0), emit(m * n, 0.0) {}

  double& tr(std::size_t m, std::size_t i, std::size_t j) { return trans[(m * num_states + i) * num_states + j]; }
  double tr(std::size_t m, std::size_t i, std::size_t j) const { return trans[(m * num_states + i) * num_states + j]; }
  double& em(std::size_t m, std::size_t j) { return emit[m * num_states + j]; }
  double em(std::size_t m, std::size_t j) const { return emit[m * num_states + j]; }
};

// Tolerance on log-normalization of prior and transition rows.
inline constexpr double kNormalizationTol = 1e-9;

// Throws ValidationError on shape mismatch, non-normalized prior/transition
// rows, NaN anywhere, or non-finite emissions.
void validate(const LatticePotentials& l);

struct ForwardResult {
  RowMatrix alpha;  // M x N
  double loglik = 0.0;
};

struct PosteriorSet {
  RowMatrix gamma;         // M x N
  std::vector<double> xi;  // (M-1) * N * N, same layout as trans
  double loglik = 0.0;

  double xi_at(std::size_t m, std::size_t i, std::size_t j) const {
    const auto n = static_cast<std::size_t>(gamma.cols());
    return xi[(m * n + i) * n + j];
  }
};

struct StatePath {
  std::vector<int> states;
  double score = 0.0;
};

struct PotentialGrads {
  std::vector<double> d_prior;
  std::vector<double> d_trans;
  RowMatrix d_emit;
};

enum class Exec {
  kAuto,      // parallel once N reaches kParallelMinStates
  kSerial,
  kParallel,  // OpenMP over the state dimension
};

// Below this many states a fork/join per node costs more than the row work.
inline constexpr std::size_t kParallelMinStates = 256;

ForwardResult forward(const LatticePotentials& l, Exec exec = Exec::kAuto);
RowMatrix backward(const LatticePotentials& l, Exec exec = Exec::kAuto);
PosteriorSet posteriors(const LatticePotentials& l, Exec exec = Exec::kAuto);

// d loglik / d (each log-potential): gamma_1, xi_m, gamma_m.
PotentialGrads loglik_grad_potentials(const LatticePotentials& l, Exec exec = Exec::kAuto);

// Max-probability path; ties go to the smallest state index.
StatePath viterbi(const LatticePotentials& l);

// Ancestral sampling from prior and transitions; emissions are ignored.
StatePath sample_path(const LatticePotentials& l, Rng& rng);

// Log joint of a state sequence, accumulated node by node as
// ((prior + emit_0) + trans_0) + emit_1 + ... so that viterbi() and the
// enumeration oracle add the same terms in the same order.
double path_score(const LatticePotentials& l, std::span<const int> states);

inline constexpr double kMaxBruteForcePaths = 1e6;

// Exhaustive enumeration over N^M sequences. Throws ValidationError when N^M > 1e6.
double brute_force_loglik(const LatticePotentials& l);
StatePath brute_force_best_path(const LatticePotentials& l);

// Straightforward serial kernels: per-entry log_sum_exp over gathered
// columns, no blocking, no threads. Kept as the reference the optimized
// kernels above are tested and benchmarked against.
namespace reference {
ForwardResult forward(const LatticePotentials& l);
RowMatrix backward(const LatticePotentials& l);
PosteriorSet posteriors(const LatticePotentials& l);
}  // namespace reference

}  // namespace nhmm
