#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "nhmm/model.hpp"
#include "nhmm/selfcheck.hpp"

using namespace nhmm;

namespace {

ModelConfig small_config(Variant v, int hop, CellType cell = CellType::kElman, int layers = 1) {
  ModelConfig c;
  c.num_states = 4;
  c.time_shift = 2;
  c.hop = hop;
  c.feature_dim = 6;
  c.encoder = {layers, 8, cell};
  c.variant = v;
  return c;
}

RowMatrix random_frames(Eigen::Index t, Eigen::Index d, Rng& rng) {
  RowMatrix x(t, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.standard_normal();
  return x;
}

}  // namespace

TEST_CASE("parameter counts follow the layer shapes and match across variants") {
  for (CellType cell : {CellType::kElman, CellType::kLstm}) {
    for (int layers : {1, 3}) {
      for (int n : {3, 50, 100}) {
        ModelConfig c;
        c.num_states = n;
        c.encoder = {layers, 16, cell};
        const std::size_t g = cell == CellType::kLstm ? 4 : 1;
        std::size_t expect = 0;
        for (int l = 0; l < layers; ++l) {
          const std::size_t in = l == 0 ? 40 : 16;
          expect += g * 16 * in + g * 16 * 16 + g * 16;
        }
        expect += 16 * n + 40 * n;
        c.variant = Variant::kNeuralHmm;
        CHECK(parameter_count(c) == expect);
        c.variant = Variant::kVqApc;
        CHECK(parameter_count(c) == expect);
        Rng rng(1);
        CHECK(parameter_count(param_init(c, rng)) == expect);
      }
    }
  }
}

TEST_CASE("param_init is deterministic and bounded") {
  const ModelConfig c = small_config(Variant::kNeuralHmm, 1);
  Rng a(5), b(5);
  const ModelParams p = param_init(c, a), q = param_init(c, b);
  CHECK(p.U == q.U);
  CHECK(p.V == q.V);
  CHECK(p.layers[0].wx == q.layers[0].wx);
  CHECK(p.layers[0].wx.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(6.0));
  CHECK(p.layers[0].wh.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("chain node times partition the modeled frames") {
  for (int hop : {1, 3, 7}) {
    for (std::size_t t : {std::size_t(13), std::size_t(20), std::size_t(57)}) {
      if (t <= static_cast<std::size_t>(5 + hop)) continue;
      const auto chains = chain_indices(t, 5, hop);
      CHECK(chains.size() == static_cast<std::size_t>(hop));
      std::multiset<std::size_t> all;
      for (const auto& c : chains) {
        for (std::size_t i = 1; i < c.node_times.size(); ++i) CHECK(c.node_times[i] - c.node_times[i - 1] == std::size_t(hop));
        CHECK(c.node_times.front() == static_cast<std::size_t>(5 + c.offset));
        all.insert(c.node_times.begin(), c.node_times.end());
      }
      CHECK(all.size() == t - 5);
      std::set<std::size_t> uniq(all.begin(), all.end());
      CHECK(uniq.size() == all.size());
      CHECK(*uniq.begin() == 5);
      CHECK(*uniq.rbegin() == t - 1);
    }
  }
  CHECK_THROWS_AS(chain_indices(8, 5, 3), ValidationError);
  CHECK_NOTHROW(chain_indices(9, 5, 3));
}

TEST_CASE("state scores are shifted by k") {
  RowMatrix h(5, 2);
  h << 1, 0, 0, 1, 1, 1, 2, 0, 0, 2;
  RowMatrix u(2, 3);
  u << 1, 2, 3, 4, 5, 6;
  const RowMatrix s = state_scores(h, u, 2);
  REQUIRE(s.rows() == 3);
  // s for frame 2 uses h_0 = (1, 0)
  CHECK(s(0, 2) == 3.0);
  // s for frame 4 uses h_2 = (1, 1)
  CHECK(s(2, 1) == 7.0);
  CHECK_THROWS_AS(state_scores(h, u, 5), ValidationError);
}

TEST_CASE("emission log density") {
  RowMatrix v(2, 2);
  v << 0, 1, 0, 1;
  const std::vector<double> x = {0.0, 0.0};
  const Vector e = emission_logprob(x, v);
  CHECK(e(0) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(e(1) == doctest::Approx(-std::log(2.0 * std::numbers::pi) - 1.0).epsilon(1e-15));
}

TEST_CASE("encoder is causal") {
  for (CellType cell : {CellType::kElman, CellType::kLstm}) {
    const ModelConfig c = small_config(Variant::kNeuralHmm, 1, cell, 2);
    Rng rng(3);
    const ModelParams p = param_init(c, rng);
    RowMatrix x = random_frames(15, 6, rng);
    const RowMatrix h = encode(p, c, x);
    x.row(9).setConstant(4.0);
    const RowMatrix h2 = encode(p, c, x);
    CHECK(h.topRows(9) == h2.topRows(9));
    CHECK(h.row(9) != h2.row(9));
  }
}

TEST_CASE("total loss is the sum of per-chain losses") {
  Rng rng(8);
  ModelConfig c = small_config(Variant::kNeuralHmm, 7);
  const ModelParams p = param_init(c, rng);
  const RowMatrix x = random_frames(40, 6, rng);
  const auto lattices = build_chain_lattices(p, x, c);
  CHECK(lattices.size() == 7);
  double sum = 0.0;
  for (const auto& l : lattices) {
    validate(l.potentials);
    sum -= forward(l.potentials).loglik;
  }
  CHECK(std::abs(total_loss(p, x, c) - sum) <= 1e-10);
}

TEST_CASE("linear transitions reduce the chain to frame-independent codes") {
  Rng rng(12);
  ModelConfig c = small_config(Variant::kNeuralHmm, 1);
  const ModelParams p = param_init(c, rng);
  const RowMatrix x = random_frames(25, 6, rng);
  const auto lattices = build_chain_lattices(p, x, c, TransitionForm::kLinear);
  REQUIRE(lattices.size() == 1);
  c.variant = Variant::kVqApc;
  CHECK(-forward(lattices[0].potentials).loglik == doctest::Approx(total_loss(p, x, c)).epsilon(1e-12));
}

TEST_CASE("vq_apc posteriors are normalized") {
  Rng rng(13);
  const ModelConfig c = small_config(Variant::kVqApc, 1);
  const ModelParams p = param_init(c, rng);
  const RowMatrix r = vq_apc_posteriors(p, random_frames(12, 6, rng), c);
  CHECK(r.rows() == 10);
  for (Eigen::Index t = 0; t < r.rows(); ++t) CHECK(r.row(t).sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("analytic gradients match finite differences") {
  struct Case {
    Variant v;
    int hop;
    CellType cell;
    int layers;
  };
  const Case cases[] = {{Variant::kNeuralHmm, 1, CellType::kElman, 1}, {Variant::kNeuralHmm, 3, CellType::kElman, 1},
                        {Variant::kVqApc, 1, CellType::kElman, 1},     {Variant::kVqApc, 3, CellType::kElman, 1},
                        {Variant::kNeuralHmm, 2, CellType::kLstm, 2},  {Variant::kVqApc, 1, CellType::kLstm, 1}};
  for (const Case& k : cases) {
    CAPTURE(to_string(k.v));
    CAPTURE(k.hop);
    CAPTURE(to_string(k.cell));
    const ModelConfig c = small_config(k.v, k.hop, k.cell, k.layers);
    Rng rng(31);
    ModelParams p = param_init(c, rng);
    p.U *= 4.0;
    const GradCheckReport r = check_model_gradients(p, random_frames(20, 6, rng), c);
    CAPTURE(r.worst_entry);
    CAPTURE(r.max_rel_error);
    CHECK(r.passed());
    CHECK(r.checked == parameter_count(p));
  }
}

TEST_CASE("loss from total_loss_grad equals total_loss") {
  for (Variant v : {Variant::kNeuralHmm, Variant::kVqApc}) {
    const ModelConfig c = small_config(v, 2);
    Rng rng(2);
    const ModelParams p = param_init(c, rng);
    const RowMatrix x = random_frames(20, 6, rng);
    CHECK(total_loss_grad(p, x, c).loss == doctest::Approx(total_loss(p, x, c)).epsilon(1e-13));
  }
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.hop = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.hop = 1;
  c.tap_layer = 2;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(parse_variant("hmm"), ValidationError);
  CHECK(parse_variant("vq_apc") == Variant::kVqApc);
  CHECK(parse_cell("lstm") == CellType::kLstm);
}
