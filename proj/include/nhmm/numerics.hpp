#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nhmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Bad arguments, schema violations, broken invariants. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed files and other runtime data problems. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// log(sum(exp(v))) with the max subtracted first. Returns -inf when every
/// entry is -inf. Throws ValidationError("empty reduction") on empty input.
double log_sum_exp(std::span<const double> v);

/// Row-wise softmax. Each row is shifted by its max before exponentiation.
RowMatrix softmax_rows(const RowMatrix& scores);

/// Row-wise log-softmax, i.e. scores[i, j] - log_sum_exp(scores[i, :]).
RowMatrix log_softmax_rows(const RowMatrix& scores);

void log_softmax_inplace(std::span<double> v);

// SplitMix64 (Steele, Lea, Flood 2014). State is a single u64 advanced by
// 0x9E3779B97F4A7C15 per draw, output mixed by the standard finalizer.
// Doubles use the top 53 bits. Normals use the Box-Muller cosine branch and
// consume exactly two uniforms each, so the stream depends on nothing but
// the state word.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double standard_normal();

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

std::vector<double> rng_standard_normal(Rng& rng, std::size_t n);

// Fisher-Yates driven by Rng::below, identical on every platform.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace nhmm
