#include <doctest.h>

#include <cmath>

#include "nhmm/probing.hpp"
#include "nhmm/training.hpp"
#include "temp_dir.hpp"

using namespace nhmm;

namespace {

// Entropies and mutual information straight from the counts.
struct Pencil {
  double hz = 0, hy = 0, mi = 0;
};

Pencil pencil(const std::vector<std::vector<double>>& c) {
  double n = 0;
  std::vector<double> row(c.size(), 0.0), col(c[0].size(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c[i].size(); ++j) {
      row[i] += c[i][j];
      col[j] += c[i][j];
      n += c[i][j];
    }
  }
  Pencil p;
  for (double r : row) if (r > 0) p.hz -= r / n * std::log(r / n);
  for (double k : col) if (k > 0) p.hy -= k / n * std::log(k / n);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c[i].size(); ++j) {
      if (c[i][j] > 0) p.mi += c[i][j] / n * std::log(c[i][j] * n / (row[i] * col[j]));
    }
  }
  return p;
}

}  // namespace

TEST_CASE("NMI of the 2x2 table [[2,1],[1,2]]") {
  // I = (2/3) ln(4/3) + (1/3) ln(2/3), H = ln 2 on both sides.
  const double mi = 2.0 / 3.0 * std::log(4.0 / 3.0) + 1.0 / 3.0 * std::log(2.0 / 3.0);
  const double expect = mi / std::log(2.0);
  CHECK(std::abs(nmi_from_table({{2, 1}, {1, 2}}) - expect) <= 1e-12);
  const std::vector<int> z = {0, 0, 0, 1, 1, 1}, y = {0, 0, 1, 0, 1, 1};
  CHECK(std::abs(nmi(z, y) - expect) <= 1e-12);
}

TEST_CASE("NMI normalizations on an asymmetric table") {
  const std::vector<std::vector<double>> t = {{5, 1, 0}, {0, 3, 1}, {2, 0, 4}, {1, 1, 1}};
  const Pencil p = pencil(t);
  CHECK(std::abs(nmi_from_table(t, NmiNorm::kArithmetic) - 2 * p.mi / (p.hz + p.hy)) <= 1e-12);
  CHECK(std::abs(nmi_from_table(t, NmiNorm::kMax) - p.mi / std::max(p.hz, p.hy)) <= 1e-12);
  CHECK(std::abs(nmi_from_table(t, NmiNorm::kSqrt) - p.mi / std::sqrt(p.hz * p.hy)) <= 1e-12);
}

TEST_CASE("NMI extremes") {
  const std::vector<int> a = {0, 0, 1, 1, 2, 2};
  const std::vector<int> relabel = {7, 7, 3, 3, 5, 5};
  CHECK(nmi(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(nmi(a, relabel) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(nmi_from_table({{1, 1}, {1, 1}}) == doctest::Approx(0.0));
  const std::vector<int> one = {0, 0, 0, 0, 0, 0};
  CHECK(nmi(one, a) == 0.0);
  CHECK_THROWS_AS(nmi(std::vector<int>{0, 1}, std::vector<int>{0}), ValidationError);
  CHECK(parse_nmi_norm("sqrt") == NmiNorm::kSqrt);
  CHECK_THROWS_AS(parse_nmi_norm("geometric"), ValidationError);
}

TEST_CASE("boundaries from codes") {
  const std::vector<int> c = {1, 1, 2, 2, 2, 3};
  CHECK(boundaries_from_codes(c) == std::vector<std::size_t>{2, 5});
  CHECK(boundaries_from_codes(std::vector<int>{4, 4, 4}).empty());
}

TEST_CASE("segmentation fixture") {
  const std::vector<std::size_t> ref = {10, 20}, hyp = {11, 12, 40};
  const SegScore s = seg_prf(hyp, ref);
  CHECK(s.precision == 1.0 / 3.0);
  CHECK(s.recall == 1.0 / 2.0);
  CHECK(s.f1 == doctest::Approx(2.0 / 5.0).epsilon(1e-15));
  CHECK(s.hits == 1);

  const SegScore same = seg_prf(ref, ref);
  CHECK(same.f1 == 1.0);
  const SegScore none = seg_prf(std::vector<std::size_t>{}, std::vector<std::size_t>{});
  CHECK(none.f1 == 1.0);
  const SegScore miss = seg_prf(std::vector<std::size_t>{}, ref);
  CHECK(miss.precision == 0.0);
  CHECK(miss.recall == 0.0);
  CHECK(miss.f1 == 0.0);
}

TEST_CASE("segmentation tolerance is inclusive at 20 ms") {
  const std::vector<std::size_t> ref = {10};
  CHECK(seg_prf(std::vector<std::size_t>{12}, ref).hits == 1);
  CHECK(seg_prf(std::vector<std::size_t>{8}, ref).hits == 1);
  CHECK(seg_prf(std::vector<std::size_t>{13}, ref).hits == 0);
  CHECK(seg_prf(std::vector<std::size_t>{13}, ref, 30.0).hits == 1);
}

TEST_CASE("matching is one-to-one and maximal") {
  CHECK(seg_prf(std::vector<std::size_t>{10, 11}, std::vector<std::size_t>{10}).hits == 1);
  // Nearest-first would pair 11 with 10 and strand 8.
  CHECK(seg_prf(std::vector<std::size_t>{8, 11}, std::vector<std::size_t>{10, 13}).hits == 2);
}

TEST_CASE("precision and recall swap when hyp and ref swap") {
  Rng rng(17);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<std::size_t> a, b;
    for (std::size_t t = 0; t < 60; ++t) {
      if (rng.uniform() < 0.15) a.push_back(t);
      if (rng.uniform() < 0.15) b.push_back(t);
    }
    const SegScore x = seg_prf(a, b), y = seg_prf(b, a);
    CHECK(x.precision == y.recall);
    CHECK(x.recall == y.precision);
    CHECK(x.f1 == y.f1);
  }
}

TEST_CASE("seg_total sums counts") {
  const SegScore a = seg_prf(std::vector<std::size_t>{1, 5}, std::vector<std::size_t>{1});
  const SegScore b = seg_prf(std::vector<std::size_t>{9}, std::vector<std::size_t>{9, 30, 50});
  const SegScore t = seg_total(std::vector<SegScore>{a, b});
  CHECK(t.precision == doctest::Approx(2.0 / 3.0));
  CHECK(t.recall == doctest::Approx(2.0 / 4.0));
}

TEST_CASE("decode_codes agrees with the lattice and posterior primitives") {
  ModelConfig c;
  c.num_states = 3;
  c.time_shift = 2;
  c.feature_dim = 4;
  c.encoder = {1, 5, CellType::kElman};
  Rng rng(6);
  ModelParams p = param_init(c, rng);
  p.U *= 3.0;
  RowMatrix x(30, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * rng.standard_normal();

  c.hop = 1;
  const CodeSequence hmm = decode_codes(p, x, c);
  CHECK(hmm.first_frame == 2);
  const auto lat = build_chain_lattices(p, x, c);
  CHECK(hmm.codes == viterbi(lat[0].potentials).states);

  c.hop = 3;
  const CodeSequence hop3 = decode_codes(p, x, c);
  REQUIRE(hop3.codes.size() == 28);
  for (const auto& ch : build_chain_lattices(p, x, c)) {
    const StatePath v = viterbi(ch.potentials);
    for (std::size_t i = 0; i < v.states.size(); ++i) CHECK(hop3.codes[ch.index.node_times[i] - 2] == v.states[i]);
  }

  c.variant = Variant::kVqApc;
  const CodeSequence vq = decode_codes(p, x, c);
  const RowMatrix r = vq_apc_posteriors(p, x, c);
  for (Eigen::Index t = 0; t < r.rows(); ++t) {
    Eigen::Index arg = 0;
    r.row(t).maxCoeff(&arg);
    CHECK(vq.codes[static_cast<std::size_t>(t)] == arg);
  }
}

TEST_CASE("linear probe separates separable classes") {
  Rng rng(2);
  RowMatrix reps(600, 3);
  std::vector<int> y(600);
  for (Eigen::Index i = 0; i < 600; ++i) {
    const int k = static_cast<int>(i % 3);
    y[static_cast<std::size_t>(i)] = k;
    for (Eigen::Index j = 0; j < 3; ++j) reps(i, j) = (j == k ? 4.0 : 0.0) + 0.3 * rng.standard_normal();
  }
  ProbeConfig cfg;
  cfg.learning_rate = 0.05;
  const LinearProbe probe = probe_train(reps, y, 3, cfg);
  CHECK(probe_eval(probe, reps, y) < 0.01);
  CHECK_THROWS_AS(probe_train(reps, std::vector<int>(600, 3), 3), ValidationError);
}

TEST_CASE("probe_eval counts errors") {
  LinearProbe p;
  p.W = RowMatrix::Zero(2, 1);
  p.W(1, 0) = 1.0;
  p.b = Vector::Zero(2);
  RowMatrix x(4, 1);
  x << -1, 1, 2, -3;
  const std::vector<int> y = {0, 1, 0, 0};
  CHECK(probe_eval(p, x, y) == 0.25);
}

TEST_CASE("codes file round trip and label vocab") {
  TempDir dir;
  CodeSequence a{{0, 2, 2, 1}, 5, 10.0}, b{{3}, 5, 10.0};
  write_codes(dir / "codes.txt", {{"u1", a}, {"u2", b}});
  const auto r = read_codes(dir / "codes.txt");
  REQUIRE(r.size() == 2);
  CHECK(r[0].first == "u1");
  CHECK(r[0].second == a.codes);
  CHECK(r[1].second == b.codes);

  LabelVocab v;
  CHECK(v.id("sil") == 0);
  CHECK(v.id("aa") == 1);
  CHECK(v.id("sil") == 0);
  CHECK(v.size() == 2);
}
