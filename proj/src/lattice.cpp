#include "nhmm/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <omp.h>

namespace nhmm {

namespace {

constexpr std::size_t kColumnBlock = 64;

bool use_parallel(Exec exec, std::size_t n) {
  switch (exec) {
    case Exec::kSerial:
      return false;
    case Exec::kParallel:
      return true;
    case Exec::kAuto:
      break;
  }
  return n >= kParallelMinStates && omp_get_max_threads() > 1;
}

// next[j] = log_sum_exp_i(prev[i] + t[i, j]) + emit[j] for j in [j0, j1).
// Row-major sweep: one pass for the column max, one for the shifted sum.
void forward_columns(const double* prev, const double* t, const double* emit, double* next, std::size_t n,
                     std::size_t j0, std::size_t j1) {
  double mx[kColumnBlock];
  double acc[kColumnBlock];
  const std::size_t w = j1 - j0;
  std::fill_n(mx, w, kNegInf);
  std::fill_n(acc, w, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = prev[i];
    if (a == kNegInf) continue;
    const double* row = t + i * n + j0;
    for (std::size_t j = 0; j < w; ++j) mx[j] = std::max(mx[j], a + row[j]);
  }
  for (std::size_t j = 0; j < w; ++j) {
    if (mx[j] == kNegInf) mx[j] = 0.0;  // whole column is -inf; acc stays 0 and log(0) = -inf
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a = prev[i];
    if (a == kNegInf) continue;
    const double* row = t + i * n + j0;
    for (std::size_t j = 0; j < w; ++j) acc[j] += std::exp(a + row[j] - mx[j]);
  }
  for (std::size_t j = 0; j < w; ++j) next[j0 + j] = mx[j] + std::log(acc[j]) + emit[j0 + j];
}

ForwardResult forward_impl(const LatticePotentials& l, bool parallel) {
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  ForwardResult r;
  r.alpha.resize(static_cast<Eigen::Index>(m_count), static_cast<Eigen::Index>(n));
  double* alpha = r.alpha.data();
  for (std::size_t j = 0; j < n; ++j) alpha[j] = l.prior[j] + l.emit[j];

  const std::size_t blocks = (n + kColumnBlock - 1) / kColumnBlock;
  for (std::size_t m = 0; m + 1 < m_count; ++m) {
    const double* prev = alpha + m * n;
    double* next = alpha + (m + 1) * n;
    const double* t = l.trans.data() + m * n * n;
    const double* emit = l.emit.data() + (m + 1) * n;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t b = 0; b < blocks; ++b) {
      forward_columns(prev, t, emit, next, n, b * kColumnBlock, std::min(n, (b + 1) * kColumnBlock));
    }
  }
  r.loglik = log_sum_exp(std::span<const double>(alpha + (m_count - 1) * n, n));
  return r;
}

// Row i: log_sum_exp_j(t[i, j] + w[j]) where w = emit_{m+1} + beta_{m+1}.
double row_lse(const double* row, const double* w, std::size_t n) {
  double mx = kNegInf;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j] + w[j]);
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] + w[j] - mx);
  return mx + std::log(acc);
}

RowMatrix backward_impl(const LatticePotentials& l, bool parallel) {
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  RowMatrix beta(static_cast<Eigen::Index>(m_count), static_cast<Eigen::Index>(n));
  double* b = beta.data();
  std::fill_n(b + (m_count - 1) * n, n, 0.0);
  std::vector<double> w(n);
  for (std::size_t m = m_count - 1; m-- > 0;) {
    const double* t = l.trans.data() + m * n * n;
    for (std::size_t j = 0; j < n; ++j) w[j] = l.emit[(m + 1) * n + j] + b[(m + 1) * n + j];
#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t i = 0; i < n; ++i) b[m * n + i] = row_lse(t + i * n, w.data(), n);
  }
  return beta;
}

PosteriorSet posteriors_impl(const LatticePotentials& l, bool parallel) {
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  const ForwardResult fw = forward_impl(l, parallel);
  const RowMatrix beta = backward_impl(l, parallel);
  PosteriorSet p;
  p.loglik = fw.loglik;
  p.gamma = (fw.alpha + beta).array() - fw.loglik;
  p.gamma = p.gamma.array().exp();
  p.xi.resize((m_count > 0 ? m_count - 1 : 0) * n * n);
  const auto rows = static_cast<std::ptrdiff_t>(p.xi.size() / std::max<std::size_t>(n, 1));
  // One row per (edge, source state); w_{m+1} is recomputed inline.
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t m = static_cast<std::size_t>(r) / n, i = static_cast<std::size_t>(r) % n;
    const double a = fw.alpha(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) - fw.loglik;
    const double* t = l.trans.data() + (m * n + i) * n;
    const double* e = l.emit.data() + (m + 1) * n;
    const double* bt = beta.data() + (m + 1) * n;
    double* out = p.xi.data() + (m * n + i) * n;
    for (std::size_t j = 0; j < n; ++j) out[j] = std::exp(a + t[j] + e[j] + bt[j]);
  }
  return p;
}

std::string node_where(std::size_t m) { return " at node " + std::to_string(m); }

}  // namespace

void validate(const LatticePotentials& l) {
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  if (m_count < 1 || n < 1) throw ValidationError("lattice needs at least one node and one state");
  if (l.prior.size() != n || l.emit.size() != m_count * n || l.trans.size() != (m_count - 1) * n * n) {
    throw ValidationError("lattice potential shapes do not match M=" + std::to_string(m_count) +
                          ", N=" + std::to_string(n));
  }
  auto check_dist = [&](std::span<const double> v, auto&& what) {
    for (double x : v) {
      if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) throw ValidationError(what() + " has NaN/+inf");
    }
    const double z = log_sum_exp(v);
    if (!(std::abs(z) <= kNormalizationTol)) {
      throw ValidationError(what() + " is not log-normalized (log-sum " + std::to_string(z) + ")");
    }
  };
  check_dist(l.prior, [] { return std::string("prior"); });
  for (std::size_t m = 0; m + 1 < m_count; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      check_dist(std::span<const double>(l.trans.data() + (m * n + i) * n, n),
                 [&] { return "transition row " + std::to_string(i) + node_where(m); });
    }
  }
  for (std::size_t k = 0; k < l.emit.size(); ++k) {
    if (!std::isfinite(l.emit[k])) throw ValidationError("non-finite emission" + node_where(k / n));
  }
}

ForwardResult forward(const LatticePotentials& l, Exec exec) {
  validate(l);
  return forward_impl(l, use_parallel(exec, l.num_states));
}

RowMatrix backward(const LatticePotentials& l, Exec exec) {
  validate(l);
  return backward_impl(l, use_parallel(exec, l.num_states));
}

PosteriorSet posteriors(const LatticePotentials& l, Exec exec) {
  validate(l);
  return posteriors_impl(l, use_parallel(exec, l.num_states));
}

PotentialGrads loglik_grad_potentials(const LatticePotentials& l, Exec exec) {
  PosteriorSet p = posteriors(l, exec);
  PotentialGrads g;
  g.d_prior.assign(p.gamma.row(0).data(), p.gamma.row(0).data() + l.num_states);
  g.d_trans = std::move(p.xi);
  g.d_emit = std::move(p.gamma);
  return g;
}

StatePath viterbi(const LatticePotentials& l) {
  validate(l);
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  std::vector<double> delta(n), next(n);
  std::vector<int> back((m_count - 1) * n);
  for (std::size_t j = 0; j < n; ++j) delta[j] = l.prior[j] + l.emit[j];
  for (std::size_t m = 0; m + 1 < m_count; ++m) {
    for (std::size_t j = 0; j < n; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = delta[i] + l.tr(m, i, j);
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      next[j] = best + l.em(m + 1, j);
      back[m * n + j] = arg;
    }
    std::swap(delta, next);
  }
  StatePath path;
  path.states.resize(m_count);
  const auto last = std::max_element(delta.begin(), delta.end());  // first maximum
  path.score = *last;
  path.states[m_count - 1] = static_cast<int>(last - delta.begin());
  for (std::size_t m = m_count - 1; m > 0; --m) {
    path.states[m - 1] = back[(m - 1) * n + static_cast<std::size_t>(path.states[m])];
  }
  return path;
}

StatePath sample_path(const LatticePotentials& l, Rng& rng) {
  validate(l);
  const std::size_t n = l.num_states;
  auto draw = [&](const double* logp) {
    const double u = rng.uniform();
    double cum = 0.0;
    int last_valid = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(logp[j]);
      if (p > 0.0) last_valid = static_cast<int>(j);
      cum += p;
      if (u < cum) return static_cast<int>(j);
    }
    return last_valid;  // cum fell short of u by rounding
  };
  StatePath path;
  path.states.resize(l.num_nodes);
  path.states[0] = draw(l.prior.data());
  for (std::size_t m = 0; m + 1 < l.num_nodes; ++m) {
    path.states[m + 1] = draw(l.trans.data() + (m * n + static_cast<std::size_t>(path.states[m])) * n);
  }
  path.score = path_score(l, path.states);
  return path;
}

double path_score(const LatticePotentials& l, std::span<const int> states) {
  if (states.size() != l.num_nodes) throw ValidationError("path length does not match lattice");
  double s = l.prior[states[0]] + l.em(0, states[0]);
  for (std::size_t m = 0; m + 1 < l.num_nodes; ++m) {
    s = s + l.tr(m, states[m], states[m + 1]);
    s = s + l.em(m + 1, states[m + 1]);
  }
  return s;
}

namespace {

template <typename Visit>
void enumerate_paths(const LatticePotentials& l, Visit&& visit) {
  validate(l);
  if (std::pow(static_cast<double>(l.num_states), static_cast<double>(l.num_nodes)) > kMaxBruteForcePaths) {
    throw ValidationError("instance too large for enumeration (N^M > 1e6)");
  }
  std::vector<int> z(l.num_nodes, 0);
  const int n = static_cast<int>(l.num_states);
  while (true) {
    visit(z);
    std::size_t pos = z.size();
    while (pos > 0 && ++z[pos - 1] == n) z[--pos] = 0;
    if (pos == 0) break;
  }
}

}  // namespace

double brute_force_loglik(const LatticePotentials& l) {
  // Streaming log-sum-exp with rescaling on a new maximum.
  double mx = kNegInf, acc = 0.0;
  enumerate_paths(l, [&](const std::vector<int>& z) {
    const double s = path_score(l, z);
    if (s == kNegInf) return;
    if (s > mx) {
      acc = (mx == kNegInf ? 0.0 : acc * std::exp(mx - s)) + 1.0;
      mx = s;
    } else {
      acc += std::exp(s - mx);
    }
  });
  return mx == kNegInf ? kNegInf : mx + std::log(acc);
}

StatePath brute_force_best_path(const LatticePotentials& l) {
  StatePath best{{}, kNegInf};
  enumerate_paths(l, [&](const std::vector<int>& z) {
    const double s = path_score(l, z);
    if (best.states.empty() || s > best.score) best = {z, s};
  });
  return best;
}

}  // namespace nhmm
