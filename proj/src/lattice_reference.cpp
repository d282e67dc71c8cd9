#include <cmath>

#include "nhmm/lattice.hpp"

namespace nhmm::reference {

ForwardResult forward(const LatticePotentials& l) {
  validate(l);
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  ForwardResult r;
  r.alpha.resize(static_cast<Eigen::Index>(m_count), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) r.alpha(0, j) = l.prior[j] + l.em(0, j);
  std::vector<double> terms(n);
  for (std::size_t m = 1; m < m_count; ++m) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) terms[i] = r.alpha(m - 1, i) + l.tr(m - 1, i, j);
      r.alpha(m, j) = log_sum_exp(terms) + l.em(m, j);
    }
  }
  const Vector last = r.alpha.row(m_count - 1);
  r.loglik = log_sum_exp(std::span<const double>(last.data(), n));
  return r;
}

RowMatrix backward(const LatticePotentials& l) {
  validate(l);
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  RowMatrix beta = RowMatrix::Zero(static_cast<Eigen::Index>(m_count), static_cast<Eigen::Index>(n));
  std::vector<double> terms(n);
  for (std::size_t m = m_count - 1; m-- > 0;) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) terms[j] = l.tr(m, i, j) + l.em(m + 1, j) + beta(m + 1, j);
      beta(m, i) = log_sum_exp(terms);
    }
  }
  return beta;
}

PosteriorSet posteriors(const LatticePotentials& l) {
  const std::size_t m_count = l.num_nodes, n = l.num_states;
  const ForwardResult fw = reference::forward(l);
  const RowMatrix beta = reference::backward(l);
  PosteriorSet p;
  p.loglik = fw.loglik;
  p.gamma.resize(static_cast<Eigen::Index>(m_count), static_cast<Eigen::Index>(n));
  for (std::size_t m = 0; m < m_count; ++m) {
    for (std::size_t j = 0; j < n; ++j) p.gamma(m, j) = std::exp(fw.alpha(m, j) + beta(m, j) - fw.loglik);
  }
  p.xi.resize((m_count - 1) * n * n);
  for (std::size_t m = 0; m + 1 < m_count; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        p.xi[(m * n + i) * n + j] =
            std::exp(fw.alpha(m, i) + l.tr(m, i, j) + l.em(m + 1, j) + beta(m + 1, j) - fw.loglik);
      }
    }
  }
  return p;
}

}  // namespace nhmm::reference
