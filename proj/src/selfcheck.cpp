#include "nhmm/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nhmm {

LatticePotentials random_lattice(std::size_t num_nodes, std::size_t num_states, Rng& rng, double scale) {
  LatticePotentials l(num_nodes, num_states);
  for (double& v : l.prior) v = scale * rng.standard_normal();
  log_softmax_inplace(l.prior);
  for (std::size_t r = 0; r + 1 < num_nodes; ++r) {
    for (std::size_t i = 0; i < num_states; ++i) {
      std::span<double> row(l.trans.data() + (r * num_states + i) * num_states, num_states);
      for (double& v : row) v = scale * rng.standard_normal();
      log_softmax_inplace(row);
    }
  }
  for (double& v : l.emit) v = scale * rng.standard_normal();
  return l;
}

namespace {

bool within(double analytic, double numeric, const GradTolerance& tol, double& rel) {
  const double diff = std::abs(analytic - numeric);
  rel = diff / std::max({std::abs(analytic), std::abs(numeric), 1e-300});
  return diff <= tol.abs_floor || rel <= tol.rel_tol;
}

// Log-sum over all paths with the potentials taken as free parameters (no
// normalization check), so finite differences may step off the simplex.
double free_loglik(const LatticePotentials& l) {
  std::vector<int> z(l.num_nodes, 0);
  std::vector<double> scores;
  const int n = static_cast<int>(l.num_states);
  while (true) {
    scores.push_back(path_score(l, z));
    std::size_t pos = z.size();
    while (pos > 0 && ++z[pos - 1] == n) z[--pos] = 0;
    if (pos == 0) break;
  }
  return log_sum_exp(scores);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

SuiteResult lattice_exactness(const SelfcheckOptions& opts) {
  SuiteResult r{"forward_vs_enumeration", true, 0.0, 1e-9, ""};
  std::size_t cases = 0;
  for (int seed = 0; seed < opts.lattice_seeds; ++seed) {
    Rng rng(opts.seed * 1000003ULL + static_cast<std::uint64_t>(seed));
    for (std::size_t m = 1; m <= 8; ++m) {
      for (std::size_t n = 1; n <= 4; ++n) {
        const LatticePotentials l = random_lattice(m, n, rng, 2.0);
        r.max_error = std::max(r.max_error, std::abs(forward(l).loglik - brute_force_loglik(l)));
        ++cases;
      }
    }
  }
  r.passed = r.max_error <= r.tolerance;
  r.detail = std::to_string(cases) + " lattices, M<=8, N<=4";
  return r;
}

SuiteResult viterbi_exactness(const SelfcheckOptions& opts) {
  SuiteResult r{"viterbi_vs_enumeration", true, 0.0, 0.0, ""};
  std::size_t cases = 0, self_mismatch = 0;
  for (int seed = 0; seed < opts.lattice_seeds; ++seed) {
    Rng rng(opts.seed * 7919ULL + static_cast<std::uint64_t>(seed));
    for (std::size_t m = 1; m <= 8; ++m) {
      for (std::size_t n = 1; n <= 4; ++n) {
        const LatticePotentials l = random_lattice(m, n, rng, 2.0);
        const StatePath v = viterbi(l);
        r.max_error = std::max(r.max_error, std::abs(v.score - brute_force_best_path(l).score));
        if (path_score(l, v.states) != v.score) ++self_mismatch;
        ++cases;
      }
    }
  }
  r.passed = r.max_error == 0.0 && self_mismatch == 0;
  r.detail = std::to_string(cases) + " lattices, exact score equality; " + std::to_string(self_mismatch) +
             " self-score mismatches";
  return r;
}

SuiteResult posterior_identities(const SelfcheckOptions& opts) {
  SuiteResult r{"posterior_identities", true, 0.0, 1e-9, ""};
  double gamma_err = 0.0;
  for (int seed = 0; seed < opts.lattice_seeds; ++seed) {
    Rng rng(opts.seed * 104729ULL + static_cast<std::uint64_t>(seed));
    for (std::size_t m = 1; m <= 8; ++m) {
      for (std::size_t n = 1; n <= 4; ++n) {
        const LatticePotentials l = random_lattice(m, n, rng, 2.0);
        PosteriorSet p = posteriors(l);
        if (opts.flip_xi_sign) {
          for (double& x : p.xi) x = -x;
        }
        for (Eigen::Index t = 0; t < p.gamma.rows(); ++t) gamma_err = std::max(gamma_err, std::abs(p.gamma.row(t).sum() - 1.0));
        for (std::size_t e = 0; e + 1 < m; ++e) {
          for (std::size_t a = 0; a < n; ++a) {
            double out_sum = 0.0, in_sum = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
              out_sum += p.xi_at(e, a, b);
              in_sum += p.xi_at(e, b, a);
            }
            r.max_error = std::max({r.max_error, std::abs(out_sum - p.gamma(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(a))),
                                    std::abs(in_sum - p.gamma(static_cast<Eigen::Index>(e + 1), static_cast<Eigen::Index>(a)))});
          }
        }
      }
    }
  }
  r.passed = r.max_error <= 1e-9 && gamma_err <= 1e-10;
  r.detail = "xi marginals (tol 1e-9); gamma row sums max err " + fmt(gamma_err) + " (tol 1e-10)";
  return r;
}

SuiteResult potential_gradients(const SelfcheckOptions& opts) {
  SuiteResult r{"potential_gradients_fd", true, 0.0, 1e-5, ""};
  const GradTolerance tol{1e-6, 1e-5, 1e-8};
  std::size_t failed = 0, checked = 0;
  Rng rng(opts.seed * 15485863ULL);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t m = 2 + static_cast<std::size_t>(rep % 4), n = 2 + static_cast<std::size_t>(rep % 3);
    LatticePotentials l = random_lattice(m, n, rng, 1.0);
    PotentialGrads g = loglik_grad_potentials(l);
    if (opts.flip_xi_sign) {
      for (double& x : g.d_trans) x = -x;
    }
    auto probe = [&](std::vector<double>& values, const std::vector<double>& analytic) {
      for (std::size_t q = 0; q < values.size(); ++q) {
        const double saved = values[q];
        values[q] = saved + tol.step;
        const double up = free_loglik(l);
        values[q] = saved - tol.step;
        const double down = free_loglik(l);
        values[q] = saved;
        double rel = 0.0;
        const bool ok = within(analytic[q], (up - down) / (2.0 * tol.step), tol, rel);
        ++checked;
        if (!ok) ++failed;
        if (std::abs(analytic[q] - (up - down) / (2.0 * tol.step)) > tol.abs_floor) r.max_error = std::max(r.max_error, rel);
      }
    };
    probe(l.prior, g.d_prior);
    probe(l.trans, g.d_trans);
    probe(l.emit, std::vector<double>(g.d_emit.data(), g.d_emit.data() + g.d_emit.size()));
  }
  r.passed = failed == 0;
  r.detail = std::to_string(checked) + " entries, " + std::to_string(failed) + " outside tolerance";
  return r;
}

SuiteResult model_gradients(const SelfcheckOptions& opts) {
  SuiteResult r{"model_gradients_fd", true, 0.0, 1e-4, ""};
  std::size_t checked = 0, failed = 0;
  double max_abs = 0.0;
  struct Case {
    Variant variant;
    int hop;
    CellType cell;
  };
  const Case cases[] = {{Variant::kNeuralHmm, 1, CellType::kElman}, {Variant::kNeuralHmm, 3, CellType::kElman},
                        {Variant::kVqApc, 1, CellType::kElman},     {Variant::kVqApc, 3, CellType::kElman},
                        {Variant::kNeuralHmm, 3, CellType::kLstm}};
  for (const Case& c : cases) {
    ModelConfig cfg;
    cfg.num_states = 4;
    cfg.time_shift = 2;
    cfg.hop = c.hop;
    cfg.feature_dim = 6;
    cfg.encoder = {1, 8, c.cell};
    cfg.variant = c.variant;
    Rng rng(opts.seed + 17);
    ModelParams params = param_init(cfg, rng);
    // Larger codebook scale than the default init so transitions are far from uniform.
    params.U *= 4.0;
    RowMatrix frames(20, cfg.feature_dim);
    for (Eigen::Index i = 0; i < frames.size(); ++i) frames.data()[i] = rng.standard_normal();
    const GradCheckReport rep = check_model_gradients(params, frames, cfg);
    checked += rep.checked;
    failed += rep.failed;
    r.max_error = std::max(r.max_error, rep.max_rel_error);
    max_abs = std::max(max_abs, rep.max_abs_error);
  }
  r.passed = failed == 0;
  r.detail = std::to_string(checked) + " parameters over 5 configs, " + std::to_string(failed) + " outside tolerance, max abs err " + fmt(max_abs);
  return r;
}

}  // namespace

GradCheckReport check_model_gradients(const ModelParams& params, const RowMatrix& frames, const ModelConfig& cfg,
                                      const GradTolerance& tol) {
  const LossAndGrad analytic = total_loss_grad(params, frames, cfg);
  ModelParams probe = params;
  auto views = tensors(probe);
  const auto grads = tensors(analytic.grad);
  GradCheckReport rep;
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (std::size_t q = 0; q < views[t].values.size(); ++q) {
      double& x = views[t].values[q];
      const double saved = x;
      x = saved + tol.step;
      const double up = total_loss(probe, frames, cfg);
      x = saved - tol.step;
      const double down = total_loss(probe, frames, cfg);
      x = saved;
      const double numeric = (up - down) / (2.0 * tol.step);
      double rel = 0.0;
      const bool ok = within(grads[t].values[q], numeric, tol, rel);
      const double diff = std::abs(grads[t].values[q] - numeric);
      ++rep.checked;
      rep.max_abs_error = std::max(rep.max_abs_error, diff);
      if (!ok) ++rep.failed;
      if (diff > tol.abs_floor && rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_entry = views[t].name + "[" + std::to_string(q) + "]";
      }
    }
  }
  return rep;
}

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opts) {
  return {lattice_exactness(opts), viterbi_exactness(opts), posterior_identities(opts), potential_gradients(opts),
          model_gradients(opts)};
}

}  // namespace nhmm
