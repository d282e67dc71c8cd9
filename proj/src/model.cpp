#include "nhmm/model.hpp"

#include <cmath>
#include <numbers>

namespace nhmm {

std::string to_string(CellType c) { return c == CellType::kLstm ? "lstm" : "elman"; }
std::string to_string(Variant v) { return v == Variant::kVqApc ? "vq_apc" : "neural_hmm"; }

CellType parse_cell(const std::string& s) {
  if (s == "elman") return CellType::kElman;
  if (s == "lstm") return CellType::kLstm;
  throw ValidationError("cell: expected elman or lstm, got '" + s + "'");
}

Variant parse_variant(const std::string& s) {
  if (s == "neural_hmm") return Variant::kNeuralHmm;
  if (s == "vq_apc") return Variant::kVqApc;
  throw ValidationError("variant: expected neural_hmm or vq_apc, got '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ValidationError(key + ": " + why); };
  if (time_shift < 1) fail("time_shift", "must be >= 1");
  if (hop < 1) fail("hop", "must be >= 1");
  if (feature_dim < 1) fail("feature_dim", "must be >= 1");
  if (encoder.layers < 1) fail("encoder_layers", "must be >= 1");
  if (encoder.hidden < 1) fail("hidden_dim", "must be >= 1");
  if (variant == Variant::kVqApc && num_states < 2) fail("num_states", "must be >= 2 for vq_apc");
  if (num_states < 1) fail("num_states", "must be >= 1");
  if (tap_layer < 0 || tap_layer > encoder.layers) fail("tap_layer", "must be in [0, encoder_layers]");
}

ModelParams zero_params(const ModelConfig& cfg) {
  const int D = cfg.encoder.hidden, G = cfg.gates();
  ModelParams p;
  for (int l = 0; l < cfg.encoder.layers; ++l) {
    const int in = l == 0 ? cfg.feature_dim : D;
    p.layers.push_back({RowMatrix::Zero(G * D, in), RowMatrix::Zero(G * D, D), Vector::Zero(G * D)});
  }
  p.U = RowMatrix::Zero(D, cfg.num_states);
  p.V = RowMatrix::Zero(cfg.feature_dim, cfg.num_states);
  return p;
}

namespace {

template <typename Params, typename View, typename Span>
std::vector<View> tensors_impl(Params& p) {
  std::vector<View> out;
  auto add = [&](std::string name, auto& m) { out.push_back({std::move(name), Span(m.data(), static_cast<std::size_t>(m.size()))}); };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    add(prefix + ".wx", p.layers[l].wx);
    add(prefix + ".wh", p.layers[l].wh);
    add(prefix + ".b", p.layers[l].b);
  }
  add("U", p.U);
  add("V", p.V);
  return out;
}

}  // namespace

std::vector<TensorView> tensors(ModelParams& p) { return tensors_impl<ModelParams, TensorView, std::span<double>>(p); }

std::vector<ConstTensorView> tensors(const ModelParams& p) {
  return tensors_impl<const ModelParams, ConstTensorView, std::span<const double>>(p);
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += t.values.size();
  return n;
}

std::size_t parameter_count(const ModelConfig& cfg) { return parameter_count(zero_params(cfg)); }

ModelParams param_init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p = zero_params(cfg);
  auto fill_uniform = [&](auto& m, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };
  for (auto& L : p.layers) {
    fill_uniform(L.wx, static_cast<double>(L.wx.cols()));
    fill_uniform(L.wh, static_cast<double>(L.wh.cols()));
    fill_uniform(L.b, static_cast<double>(L.wh.cols()));
  }
  fill_uniform(p.U, static_cast<double>(p.U.rows()));
  for (Eigen::Index i = 0; i < p.V.size(); ++i) p.V.data()[i] = 0.1 * rng.standard_normal();
  return p;
}

RowMatrix state_scores(const RowMatrix& hidden, const RowMatrix& U, int time_shift) {
  const Eigen::Index T = hidden.rows();
  if (T <= time_shift) throw ValidationError("sequence shorter than time shift");
  if (hidden.cols() != U.rows()) throw ValidationError("state_scores: hidden dim does not match U");
  return hidden.topRows(T - time_shift) * U;
}

Vector emission_logprob(std::span<const double> x, const RowMatrix& V) {
  if (static_cast<Eigen::Index>(x.size()) != V.rows()) {
    throw ValidationError("emission_logprob: frame dim " + std::to_string(x.size()) + " != codeword dim " +
                          std::to_string(V.rows()));
  }
  const double norm = -0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
  const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  Vector out(V.cols());
  for (Eigen::Index j = 0; j < V.cols(); ++j) out[j] = norm - 0.5 * (xv - V.col(j)).squaredNorm();
  return out;
}

std::vector<ChainIndex> chain_indices(std::size_t num_frames, int time_shift, int hop) {
  if (hop < 1) throw ValidationError("hop must be >= 1");
  if (num_frames <= static_cast<std::size_t>(time_shift + hop)) {
    throw ValidationError("sequence too short: T=" + std::to_string(num_frames) + " needs T > k + H = " +
                          std::to_string(time_shift + hop));
  }
  std::vector<ChainIndex> chains(static_cast<std::size_t>(hop));
  for (int c = 0; c < hop; ++c) {
    chains[c].offset = c;
    for (std::size_t t = static_cast<std::size_t>(time_shift + c); t < num_frames; t += static_cast<std::size_t>(hop)) {
      chains[c].node_times.push_back(t);
    }
  }
  return chains;
}

namespace {

// Everything the loss and its gradient share for one utterance.
struct Forward {
  EncoderTrace trace;
  RowMatrix scores;  // row t - k holds s_t
  RowMatrix emit;    // row t - k holds log p(x_t | .)
};

Forward run_forward(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg) {
  cfg.validate();
  if (frames.rows() <= cfg.time_shift + cfg.hop) {
    throw ValidationError("sequence too short: T=" + std::to_string(frames.rows()) +
                          " needs T > k + H = " + std::to_string(cfg.time_shift + cfg.hop));
  }
  Forward f;
  f.trace = encode_trace(p, cfg, frames);
  f.scores = state_scores(f.trace.top(), p.U, cfg.time_shift);
  const Eigen::Index k = cfg.time_shift;
  f.emit.resize(frames.rows() - k, cfg.num_states);
  for (Eigen::Index t = k; t < frames.rows(); ++t) {
    f.emit.row(t - k) = emission_logprob({frames.row(t).data(), static_cast<std::size_t>(frames.cols())}, p.V).transpose();
  }
  return f;
}

LatticePotentials chain_potentials(const Forward& f, const ChainIndex& chain, int time_shift, TransitionForm form) {
  const std::size_t M = chain.node_times.size();
  const auto N = static_cast<std::size_t>(f.scores.cols());
  LatticePotentials l(M, N);
  auto score_row = [&](std::size_t m) { return f.scores.row(static_cast<Eigen::Index>(chain.node_times[m]) - time_shift); };

  const Vector first = score_row(0).transpose();
  std::copy(first.data(), first.data() + N, l.prior.begin());
  log_softmax_inplace(l.prior);
  for (std::size_t m = 0; m + 1 < M; ++m) {
    RowMatrix phi;
    if (form == TransitionForm::kOuterProduct) {
      phi = score_row(m).transpose() * score_row(m + 1);
    } else {
      phi = score_row(m + 1).replicate(static_cast<Eigen::Index>(N), 1);
    }
    const RowMatrix logp = log_softmax_rows(phi);
    std::copy(logp.data(), logp.data() + N * N, l.trans.begin() + static_cast<std::ptrdiff_t>(m * N * N));
  }
  for (std::size_t m = 0; m < M; ++m) {
    const auto row = f.emit.row(static_cast<Eigen::Index>(chain.node_times[m]) - time_shift);
    std::copy(row.data(), row.data() + N, l.emit.begin() + static_cast<std::ptrdiff_t>(m * N));
  }
  return l;
}

// Frame-independent mixture: per-frame log p(x_t) and code posteriors.
void vq_apc_frames(const Forward& f, Vector& frame_loglik, RowMatrix& post) {
  const Eigen::Index rows = f.scores.rows(), N = f.scores.cols();
  frame_loglik.resize(rows);
  post.resize(rows, N);
  std::vector<double> joint(static_cast<std::size_t>(N));
  for (Eigen::Index r = 0; r < rows; ++r) {
    std::vector<double> logprior(f.scores.row(r).data(), f.scores.row(r).data() + N);
    log_softmax_inplace(logprior);
    for (Eigen::Index j = 0; j < N; ++j) joint[j] = logprior[j] + f.emit(r, j);
    frame_loglik[r] = log_sum_exp(joint);
    for (Eigen::Index j = 0; j < N; ++j) post(r, j) = std::exp(joint[j] - frame_loglik[r]);
  }
}

}  // namespace

std::vector<ChainLattice> build_chain_lattices(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg,
                                               TransitionForm form) {
  const Forward f = run_forward(p, frames, cfg);
  std::vector<ChainLattice> out;
  for (auto& chain : chain_indices(static_cast<std::size_t>(frames.rows()), cfg.time_shift, cfg.hop)) {
    LatticePotentials l = chain_potentials(f, chain, cfg.time_shift, form);
    out.push_back({std::move(chain), std::move(l)});
  }
  return out;
}

RowMatrix vq_apc_posteriors(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg) {
  const Forward f = run_forward(p, frames, cfg);
  Vector ll;
  RowMatrix post;
  vq_apc_frames(f, ll, post);
  return post;
}

double total_loss(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg) {
  const Forward f = run_forward(p, frames, cfg);
  if (cfg.variant == Variant::kVqApc) {
    Vector ll;
    RowMatrix post;
    vq_apc_frames(f, ll, post);
    return -ll.sum();
  }
  double loss = 0.0;
  for (const auto& chain : chain_indices(static_cast<std::size_t>(frames.rows()), cfg.time_shift, cfg.hop)) {
    loss -= forward(chain_potentials(f, chain, cfg.time_shift, TransitionForm::kOuterProduct)).loglik;
  }
  return loss;
}

LossAndGrad total_loss_grad(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg) {
  const Forward f = run_forward(p, frames, cfg);
  const Eigen::Index k = cfg.time_shift;
  const Eigen::Index N = cfg.num_states;
  LossAndGrad out;
  out.grad = zero_params(cfg);
  // Loss gradients w.r.t. state scores (row t - k) and codewords.
  RowMatrix d_scores = RowMatrix::Zero(f.scores.rows(), N);
  RowMatrix& dV = out.grad.V;

  auto emission_grad = [&](Eigen::Index t, const auto& weights) {
    // d(-log p(x_t|j))/dv_j = -(x_t - v_j), weighted by the posterior of j.
    for (Eigen::Index j = 0; j < N; ++j) {
      dV.col(j) -= weights[j] * (frames.row(t).transpose() - p.V.col(j));
    }
  };

  if (cfg.variant == Variant::kVqApc) {
    Vector ll;
    RowMatrix post;
    vq_apc_frames(f, ll, post);
    out.loss = -ll.sum();
    for (Eigen::Index r = 0; r < f.scores.rows(); ++r) {
      const RowMatrix prior = softmax_rows(f.scores.row(r));
      d_scores.row(r) = prior.row(0) - post.row(r);
      emission_grad(r + k, post.row(r));
    }
  } else {
    for (const auto& chain : chain_indices(static_cast<std::size_t>(frames.rows()), cfg.time_shift, cfg.hop)) {
      const LatticePotentials l = chain_potentials(f, chain, cfg.time_shift, TransitionForm::kOuterProduct);
      const PosteriorSet post = posteriors(l);
      out.loss -= post.loglik;
      const std::size_t M = chain.node_times.size();
      auto row_of = [&](std::size_t m) { return static_cast<Eigen::Index>(chain.node_times[m]) - k; };

      // Prior: d loglik / d s_first = gamma_first - softmax(s_first).
      const RowMatrix prior = softmax_rows(f.scores.row(row_of(0)));
      d_scores.row(row_of(0)) -= post.gamma.row(0) - prior.row(0);

      for (std::size_t m = 0; m + 1 < M; ++m) {
        const auto s_prev = f.scores.row(row_of(m));
        const auto s_next = f.scores.row(row_of(m + 1));
        const RowMatrix trans = softmax_rows(s_prev.transpose() * s_next);
        // d loglik / d Phi[i, j] = xi(i, j) - gamma_m(i) P(i, j).
        RowMatrix g(N, N);
        for (Eigen::Index i = 0; i < N; ++i) {
          for (Eigen::Index j = 0; j < N; ++j) {
            g(i, j) = post.xi_at(m, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) -
                      post.gamma(static_cast<Eigen::Index>(m), i) * trans(i, j);
          }
        }
        // Phi = s_prev^T s_next.
        d_scores.row(row_of(m)) -= s_next * g.transpose();
        d_scores.row(row_of(m + 1)) -= s_prev * g;
      }
      for (std::size_t m = 0; m < M; ++m) emission_grad(row_of(m) + k, post.gamma.row(static_cast<Eigen::Index>(m)));
    }
  }

  // s_t = h_{t-k}^T U over rows 0..T-k-1 of the top layer.
  const RowMatrix& h = f.trace.top();
  const Eigen::Index rows = d_scores.rows();
  out.grad.U.noalias() += h.topRows(rows).transpose() * d_scores;
  RowMatrix d_top = RowMatrix::Zero(h.rows(), h.cols());
  d_top.topRows(rows).noalias() = d_scores * p.U.transpose();
  encode_backward(p, cfg, frames, f.trace, d_top, out.grad);
  return out;
}

}  // namespace nhmm
