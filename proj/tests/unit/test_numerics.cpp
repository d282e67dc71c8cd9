#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nhmm/numerics.hpp"

using namespace nhmm;

TEST_CASE("log_sum_exp of equal entries") {
  const std::vector<double> v = {0.0, 0.0};
  CHECK(log_sum_exp(v) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> w = {3.0, 3.0, 3.0};
  CHECK(log_sum_exp(w) == doctest::Approx(3.0 + std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("log_sum_exp handles -inf and extreme magnitudes") {
  const std::vector<double> all_neg = {kNegInf, kNegInf};
  CHECK(log_sum_exp(all_neg) == kNegInf);
  const std::vector<double> mixed = {kNegInf, 1.5};
  CHECK(log_sum_exp(mixed) == 1.5);
  const std::vector<double> big = {1000.0, 1000.0};
  CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
  const std::vector<double> small = {-1000.0, -1000.0};
  CHECK(log_sum_exp(small) == doctest::Approx(-1000.0 + std::log(2.0)));
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), ValidationError);
}

TEST_CASE("log_sum_exp lies between max and max + ln n") {
  Rng rng(11);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-50.0, 50.0);
    const double m = *std::max_element(v.begin(), v.end());
    const double l = log_sum_exp(v);
    CHECK(l >= m);
    CHECK(l <= m + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("softmax rows normalize and agree with log_softmax") {
  RowMatrix s(3, 4);
  s << 1, 2, 3, 4, -1000, 0, 1000, 2, 0, 0, 0, 0;
  const RowMatrix p = softmax_rows(s);
  const RowMatrix lp = log_softmax_rows(s);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-15));
    for (Eigen::Index j = 0; j < 4; ++j) {
      if (p(i, j) > 0) CHECK(std::log(p(i, j)) == doctest::Approx(lp(i, j)).epsilon(1e-12));
    }
  }
  CHECK(p(2, 0) == doctest::Approx(0.25));
  // e^1 / (e^1 + e^2 + e^3 + e^4)
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0) + std::exp(4.0);
  CHECK(p(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
}

TEST_CASE("Rng follows the SplitMix64 reference stream") {
  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(rng.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("Rng is reproducible and restorable from its state word") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const auto saved = a.state();
  const double x = a.standard_normal();
  a.set_state(saved);
  CHECK(a.standard_normal() == x);
}

TEST_CASE("uniform, below and normal draws have the right ranges and moments") {
  Rng rng(7);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK_UNARY(u >= 0.0);
    CHECK_UNARY(u < 1.0);
    const auto k = rng.below(7);
    CHECK_UNARY(k < 7);
    const double z = rng.standard_normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(3);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  shuffle(v, rng);
  std::set<int> seen(v.begin(), v.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 49);
}
