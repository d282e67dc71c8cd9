#include <cmath>

#include "nhmm/model.hpp"

namespace nhmm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

const RowMatrix& layer_input(const EncoderTrace& trace, const RowMatrix& frames, std::size_t layer) {
  return layer == 0 ? frames : trace.hidden[layer - 1];
}

}  // namespace

EncoderTrace encode_trace(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames) {
  if (frames.cols() != cfg.feature_dim) {
    throw ValidationError("encode: frame dim " + std::to_string(frames.cols()) + " != feature_dim " +
                          std::to_string(cfg.feature_dim));
  }
  const Eigen::Index T = frames.rows();
  const Eigen::Index D = cfg.encoder.hidden;
  const bool lstm = cfg.encoder.cell == CellType::kLstm;
  EncoderTrace trace;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const RecurrentLayer& L = p.layers[l];
    const RowMatrix& in = layer_input(trace, frames, l);
    // Input projections for all steps at once; the recurrence adds W_h h_{t-1}.
    RowMatrix pre = in * L.wx.transpose();
    pre.rowwise() += L.b.transpose();
    RowMatrix h(T, D);
    Vector prev_h = Vector::Zero(D);
    if (!lstm) {
      for (Eigen::Index t = 0; t < T; ++t) {
        h.row(t) = (pre.row(t).transpose() + L.wh * prev_h).array().tanh().transpose();
        prev_h = h.row(t).transpose();
      }
    } else {
      RowMatrix gates(T, 4 * D), cells(T, D);
      Vector prev_c = Vector::Zero(D);
      for (Eigen::Index t = 0; t < T; ++t) {
        Vector z = pre.row(t).transpose() + L.wh * prev_h;
        for (Eigen::Index q = 0; q < D; ++q) {
          z[q] = sigmoid(z[q]);
          z[D + q] = sigmoid(z[D + q]);
          z[2 * D + q] = std::tanh(z[2 * D + q]);
          z[3 * D + q] = sigmoid(z[3 * D + q]);
        }
        Vector c = z.segment(D, D).cwiseProduct(prev_c) + z.segment(0, D).cwiseProduct(z.segment(2 * D, D));
        Vector hv = z.segment(3 * D, D).cwiseProduct(c.array().tanh().matrix());
        gates.row(t) = z.transpose();
        cells.row(t) = c.transpose();
        h.row(t) = hv.transpose();
        prev_h = hv;
        prev_c = c;
      }
      trace.gates.push_back(std::move(gates));
      trace.cells.push_back(std::move(cells));
    }
    trace.hidden.push_back(std::move(h));
  }
  return trace;
}

RowMatrix encode(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames) {
  return encode_trace(p, cfg, frames).top();
}

RowMatrix tap_representations(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames) {
  EncoderTrace trace = encode_trace(p, cfg, frames);
  const int layer = cfg.tap_layer == 0 ? cfg.encoder.layers : cfg.tap_layer;
  return std::move(trace.hidden[static_cast<std::size_t>(layer - 1)]);
}

void encode_backward(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames,
                     const EncoderTrace& trace, const RowMatrix& d_top, ModelParams& grads) {
  const Eigen::Index T = frames.rows();
  const Eigen::Index D = cfg.encoder.hidden;
  const bool lstm = cfg.encoder.cell == CellType::kLstm;
  RowMatrix d_out = d_top;  // dLoss/d(output of the current layer), T x D
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const RecurrentLayer& L = p.layers[l];
    RecurrentLayer& G = grads.layers[l];
    const RowMatrix& in = layer_input(trace, frames, l);
    const RowMatrix& h = trace.hidden[l];
    // dLoss/d(pre-activation) per step, T x gates*D.
    RowMatrix d_pre(T, L.wx.rows());
    Vector carry_h = Vector::Zero(D);
    if (!lstm) {
      for (Eigen::Index t = T; t-- > 0;) {
        const Vector dh = d_out.row(t).transpose() + carry_h;
        const Vector da = dh.cwiseProduct((1.0 - h.row(t).array().square()).matrix().transpose());
        d_pre.row(t) = da.transpose();
        carry_h = L.wh.transpose() * da;
      }
    } else {
      const RowMatrix& gates = trace.gates[l];
      const RowMatrix& cells = trace.cells[l];
      Vector carry_c = Vector::Zero(D);
      for (Eigen::Index t = T; t-- > 0;) {
        const Vector dh = d_out.row(t).transpose() + carry_h;
        Vector dz(4 * D);
        Vector dc_prev(D);
        for (Eigen::Index q = 0; q < D; ++q) {
          const double ig = gates(t, q), fg = gates(t, D + q), gg = gates(t, 2 * D + q), og = gates(t, 3 * D + q);
          const double c = cells(t, q);
          const double c_prev = t > 0 ? cells(t - 1, q) : 0.0;
          const double tc = std::tanh(c);
          const double dc = carry_c[q] + dh[q] * og * (1.0 - tc * tc);
          dz[q] = dc * gg * ig * (1.0 - ig);
          dz[D + q] = dc * c_prev * fg * (1.0 - fg);
          dz[2 * D + q] = dc * ig * (1.0 - gg * gg);
          dz[3 * D + q] = dh[q] * tc * og * (1.0 - og);
          dc_prev[q] = dc * fg;
        }
        d_pre.row(t) = dz.transpose();
        carry_h = L.wh.transpose() * dz;
        carry_c = dc_prev;
      }
    }
    G.wx.noalias() += d_pre.transpose() * in;
    if (T > 1) G.wh.noalias() += d_pre.bottomRows(T - 1).transpose() * h.topRows(T - 1);
    G.b += d_pre.colwise().sum().transpose();
    if (l > 0) d_out = d_pre * L.wx;
  }
}

}  // namespace nhmm
