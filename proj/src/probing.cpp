#include "nhmm/probing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nhmm {

CodeSequence decode_codes(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg) {
  const auto T = static_cast<std::size_t>(frames.rows());
  CodeSequence out;
  out.first_frame = cfg.time_shift;
  out.codes.assign(modeled_frames(T, cfg), -1);
  if (cfg.variant == Variant::kVqApc) {
    const RowMatrix post = vq_apc_posteriors(p, frames, cfg);
    for (Eigen::Index r = 0; r < post.rows(); ++r) {
      Eigen::Index arg = 0;
      post.row(r).maxCoeff(&arg);
      out.codes[static_cast<std::size_t>(r)] = static_cast<int>(arg);
    }
    return out;
  }
  for (const auto& chain : build_chain_lattices(p, frames, cfg)) {
    const StatePath path = viterbi(chain.potentials);
    for (std::size_t m = 0; m < path.states.size(); ++m) {
      out.codes[chain.index.node_times[m] - static_cast<std::size_t>(cfg.time_shift)] = path.states[m];
    }
  }
  return out;
}

NmiNorm parse_nmi_norm(const std::string& s) {
  if (s == "arithmetic") return NmiNorm::kArithmetic;
  if (s == "max") return NmiNorm::kMax;
  if (s == "sqrt") return NmiNorm::kSqrt;
  throw ValidationError("nmi_norm: expected arithmetic, max or sqrt, got '" + s + "'");
}

double nmi_from_table(const std::vector<std::vector<double>>& counts, NmiNorm norm) {
  const std::size_t rows = counts.size();
  const std::size_t cols = rows ? counts[0].size() : 0;
  std::vector<double> pr(rows, 0.0), pc(cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      pr[i] += counts[i][j];
      pc[j] += counts[i][j];
      total += counts[i][j];
    }
  }
  if (total <= 0.0) return 0.0;
  auto entropy = [&](const std::vector<double>& m) {
    double h = 0.0;
    for (double c : m) {
      if (c > 0.0) h -= (c / total) * std::log(c / total);
    }
    return h;
  };
  const double hr = entropy(pr), hc = entropy(pc);
  if (hr <= 0.0 || hc <= 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double c = counts[i][j];
      if (c > 0.0) mi += (c / total) * std::log(c * total / (pr[i] * pc[j]));
    }
  }
  switch (norm) {
    case NmiNorm::kMax:
      return mi / std::max(hr, hc);
    case NmiNorm::kSqrt:
      return mi / std::sqrt(hr * hc);
    case NmiNorm::kArithmetic:
      break;
  }
  return 2.0 * mi / (hr + hc);
}

double nmi(std::span<const int> codes, std::span<const int> labels, NmiNorm norm) {
  if (codes.size() != labels.size()) {
    throw ValidationError("nmi: length mismatch (" + std::to_string(codes.size()) + " codes vs " +
                          std::to_string(labels.size()) + " labels)");
  }
  if (codes.empty()) return 0.0;
  const int nc = *std::max_element(codes.begin(), codes.end()) + 1;
  const int nl = *std::max_element(labels.begin(), labels.end()) + 1;
  if (*std::min_element(codes.begin(), codes.end()) < 0 || *std::min_element(labels.begin(), labels.end()) < 0) {
    throw ValidationError("nmi: ids must be non-negative");
  }
  std::vector<std::vector<double>> table(static_cast<std::size_t>(nc), std::vector<double>(static_cast<std::size_t>(nl), 0.0));
  for (std::size_t t = 0; t < codes.size(); ++t) table[codes[t]][labels[t]] += 1.0;
  return nmi_from_table(table, norm);
}

std::vector<std::size_t> boundaries_from_codes(std::span<const int> codes) {
  std::vector<std::size_t> out;
  for (std::size_t t = 1; t < codes.size(); ++t) {
    if (codes[t] != codes[t - 1]) out.push_back(t);
  }
  return out;
}

namespace {

SegScore finish(std::size_t hits, std::size_t hyp_total, std::size_t ref_total) {
  SegScore s{0.0, 0.0, 0.0, hits, hyp_total, ref_total};
  if (hyp_total == 0 && ref_total == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = hyp_total ? static_cast<double>(hits) / static_cast<double>(hyp_total) : 0.0;
  s.recall = ref_total ? static_cast<double>(hits) / static_cast<double>(ref_total) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace

SegScore seg_prf(std::span<const std::size_t> hyp, std::span<const std::size_t> ref, double tol_ms,
                 double frame_shift_ms) {
  if (!std::is_sorted(hyp.begin(), hyp.end()) || !std::is_sorted(ref.begin(), ref.end())) {
    throw ValidationError("seg_prf: boundary lists must be sorted");
  }
  // Tolerance in whole frames; the epsilon keeps 20 ms / 10 ms at exactly 2.
  const auto tol = static_cast<long long>(std::floor(tol_ms / frame_shift_ms + 1e-9));
  std::size_t hits = 0, h = 0;
  for (std::size_t r : ref) {
    const auto rr = static_cast<long long>(r);
    while (h < hyp.size() && static_cast<long long>(hyp[h]) < rr - tol) ++h;
    if (h < hyp.size() && static_cast<long long>(hyp[h]) <= rr + tol) {
      ++hits;
      ++h;
    }
  }
  return finish(hits, hyp.size(), ref.size());
}

SegScore seg_total(std::span<const SegScore> parts) {
  std::size_t hits = 0, hyp = 0, ref = 0;
  for (const auto& p : parts) {
    hits += p.hits;
    hyp += p.hyp_total;
    ref += p.ref_total;
  }
  return finish(hits, hyp, ref);
}

int LinearProbe::predict(std::span<const double> x) const {
  const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Vector logits = W * xv + b;
  Eigen::Index arg = 0;
  logits.maxCoeff(&arg);
  return static_cast<int>(arg);
}

LinearProbe probe_train(const RowMatrix& reps, std::span<const int> labels, int num_classes, const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(reps.rows()) != labels.size()) {
    throw ValidationError("probe_train: " + std::to_string(reps.rows()) + " frames but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (reps.rows() == 0) throw ValidationError("probe_train: no frames");
  if (num_classes < 1) throw ValidationError("probe_train: need at least one class");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("probe_train: label out of range");
  }
  const Eigen::Index D = reps.cols(), C = num_classes;
  LinearProbe probe{RowMatrix::Zero(C, D), Vector::Zero(C)};
  RowMatrix mW = RowMatrix::Zero(C, D), vW = RowMatrix::Zero(C, D);
  Vector mb = Vector::Zero(C), vb = Vector::Zero(C);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(reps.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  long long step = 0;
  RowMatrix gW(C, D);
  Vector gb(C);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t s0 = 0; s0 < order.size(); s0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t s1 = std::min(order.size(), s0 + static_cast<std::size_t>(cfg.batch_size));
      gW.setZero();
      gb.setZero();
      for (std::size_t s = s0; s < s1; ++s) {
        const auto x = reps.row(order[s]).transpose();
        Vector logits = probe.W * x + probe.b;
        logits.array() -= logits.maxCoeff();
        Vector prob = logits.array().exp();
        prob /= prob.sum();
        prob[labels[static_cast<std::size_t>(order[s])]] -= 1.0;  // d CE / d logits
        gW.noalias() += prob * x.transpose();
        gb += prob;
      }
      const double inv = 1.0 / static_cast<double>(s1 - s0);
      gW *= inv;
      gb *= inv;
      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      mW = b1 * mW + (1.0 - b1) * gW;
      vW = b2 * vW + (1.0 - b2) * gW.cwiseAbs2();
      mb = b1 * mb + (1.0 - b1) * gb;
      vb = b2 * vb + (1.0 - b2) * gb.cwiseAbs2();
      probe.W.array() -= cfg.learning_rate * (mW.array() / c1) / ((vW.array() / c2).sqrt() + eps);
      probe.b.array() -= cfg.learning_rate * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
    }
  }
  return probe;
}

double probe_eval(const LinearProbe& probe, const RowMatrix& reps, std::span<const int> labels) {
  if (static_cast<std::size_t>(reps.rows()) != labels.size()) {
    throw ValidationError("probe_eval: frame/label count mismatch");
  }
  if (labels.empty()) throw ValidationError("probe_eval: no frames");
  std::size_t wrong = 0;
  for (Eigen::Index t = 0; t < reps.rows(); ++t) {
    if (probe.predict({reps.row(t).data(), static_cast<std::size_t>(reps.cols())}) != labels[static_cast<std::size_t>(t)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

int LabelVocab::id(const std::string& label) {
  const auto [it, inserted] = ids_.try_emplace(label, static_cast<int>(ids_.size()));
  return it->second;
}

void write_codes(const std::filesystem::path& path, const std::vector<std::pair<std::string, CodeSequence>>& codes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [id, seq] : codes) {
    out << id;
    for (int c : seq.codes) out << ' ' << c;
    out << '\n';
  }
}

std::vector<std::pair<std::string, std::vector<int>>> read_codes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::vector<int>>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string id;
    if (!(ls >> id)) continue;
    std::vector<int> codes;
    int c;
    while (ls >> c) codes.push_back(c);
    if (!ls.eof()) throw DataError(path.string() + ": malformed code line for " + id);
    out.emplace_back(std::move(id), std::move(codes));
  }
  return out;
}

}  // namespace nhmm
