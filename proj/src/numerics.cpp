#include "nhmm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace nhmm {

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ValidationError("empty reduction");
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

RowMatrix softmax_rows(const RowMatrix& scores) {
  RowMatrix out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      out(i, j) = std::exp(scores(i, j) - mx);
      z += out(i, j);
    }
    out.row(i) /= z;
  }
  return out;
}

void log_softmax_inplace(std::span<double> v) {
  const double z = log_sum_exp(v);
  for (double& x : v) x -= z;
}

RowMatrix log_softmax_rows(const RowMatrix& scores) {
  RowMatrix out = scores;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    log_softmax_inplace(std::span<double>(out.row(i).data(), static_cast<std::size_t>(out.cols())));
  }
  return out;
}

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ValidationError("Rng::below: empty range");
  // Reject the tail so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::standard_normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> rng_standard_normal(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (double& x : out) x = rng.standard_normal();
  return out;
}

}  // namespace nhmm
