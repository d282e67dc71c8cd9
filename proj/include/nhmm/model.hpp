#pragma once

#include <span>
#include <string>
#include <vector>

#include "nhmm/lattice.hpp"
#include "nhmm/numerics.hpp"

namespace nhmm {

enum class CellType { kElman, kLstm };
enum class Variant { kNeuralHmm, kVqApc };

std::string to_string(CellType c);
std::string to_string(Variant v);
CellType parse_cell(const std::string& s);
Variant parse_variant(const std::string& s);

struct EncoderConfig {
  int layers = 1;
  int hidden = 64;
  CellType cell = CellType::kElman;
};

struct ModelConfig {
  int num_states = 100;
  int time_shift = 5;   // k
  int hop = 1;          // H
  int feature_dim = 40; // d
  EncoderConfig encoder;
  Variant variant = Variant::kNeuralHmm;
  // 1-based encoder layer whose outputs feed the phone probe; 0 = top layer.
  int tap_layer = 0;

  void validate() const;
  int gates() const { return encoder.cell == CellType::kLstm ? 4 : 1; }
};

struct RecurrentLayer {
  RowMatrix wx;  // gates*D_h x in_dim
  RowMatrix wh;  // gates*D_h x D_h
  Vector b;      // gates*D_h
};

// U scores states from encoder outputs (s_t = h_{t-k}^T U). Columns of V are
// the Gaussian emission means; the output projection is the identity.
// The same struct carries gradients.
struct ModelParams {
  std::vector<RecurrentLayer> layers;
  RowMatrix U;  // D_h x N
  RowMatrix V;  // d x N
};

struct TensorView {
  std::string name;
  std::span<double> values;
};

struct ConstTensorView {
  std::string name;
  std::span<const double> values;
};

ModelParams zero_params(const ModelConfig& cfg);
// Fixed order: layer{i}.wx, layer{i}.wh, layer{i}.b for each layer, then U, then V.
std::vector<TensorView> tensors(ModelParams& p);
std::vector<ConstTensorView> tensors(const ModelParams& p);
std::size_t parameter_count(const ModelParams& p);
std::size_t parameter_count(const ModelConfig& cfg);

/// Encoder weights and U uniform in +-1/sqrt(fan_in), V ~ 0.1 N(0, 1).
/// Draw order follows tensors().
ModelParams param_init(const ModelConfig& cfg, Rng& rng);

// ---- encoder ---------------------------------------------------------------

// Per-layer activations kept for backpropagation through time.
struct EncoderTrace {
  std::vector<RowMatrix> hidden;  // per layer, T x D_h
  std::vector<RowMatrix> gates;   // LSTM only: T x 4D_h post-activation [i f g o]
  std::vector<RowMatrix> cells;   // LSTM only: T x D_h
  const RowMatrix& top() const { return hidden.back(); }
};

// Unidirectional recurrence from a zero initial state; h_t depends on x_1..x_t only.
EncoderTrace encode_trace(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames);
// Top-layer hidden states, T x D_h.
RowMatrix encode(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames);
// Outputs of the configured tap layer, T x D_h.
RowMatrix tap_representations(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames);

// Full-sequence BPTT. d_top is dLoss/dh for the top layer; weight gradients
// are accumulated into grads.layers.
void encode_backward(const ModelParams& p, const ModelConfig& cfg, const RowMatrix& frames,
                     const EncoderTrace& trace, const RowMatrix& d_top, ModelParams& grads);

// ---- lattice construction --------------------------------------------------

/// Rows for frames k..T-1 (0-based): row r = h_r^T U, i.e. s_t = h_{t-k}^T U.
/// Throws ValidationError("sequence shorter than time shift") when T <= k.
RowMatrix state_scores(const RowMatrix& hidden, const RowMatrix& U, int time_shift);

/// -(d/2) ln(2 pi) - 0.5 ||x - v_j||^2 for every column v_j of V.
Vector emission_logprob(std::span<const double> x, const RowMatrix& V);

struct ChainIndex {
  int offset = 0;
  std::vector<std::size_t> node_times;  // 0-based frame indices k+c, k+c+H, ...
};

// H chains covering frames [k, T) exactly once. Requires T > k + H.
std::vector<ChainIndex> chain_indices(std::size_t num_frames, int time_shift, int hop);

// kOuterProduct: Phi = s_prev s_next^T (neural HMM).
// kLinear: Phi[i, :] = s_next for every i, i.e. the transition ignores the
// previous state; used to check the frame-independent degeneration.
enum class TransitionForm { kOuterProduct, kLinear };

struct ChainLattice {
  ChainIndex index;
  LatticePotentials potentials;
};

std::vector<ChainLattice> build_chain_lattices(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg,
                                               TransitionForm form = TransitionForm::kOuterProduct);

// Per-frame code posteriors of the frame-independent model, (T-k) x N.
RowMatrix vq_apc_posteriors(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg);

// Negative log-likelihood: -sum over chains of the forward log-likelihood
// (neural_hmm) or -sum_t log sum_j softmax(s_t)_j p(x_t | j) (vq_apc).
double total_loss(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg);

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grad;
};

LossAndGrad total_loss_grad(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg);

// Frames that carry a latent state: T - k.
inline std::size_t modeled_frames(std::size_t num_frames, const ModelConfig& cfg) {
  return num_frames > static_cast<std::size_t>(cfg.time_shift) ? num_frames - cfg.time_shift : 0;
}

// Smallest T accepted by build_chain_lattices / total_loss.
inline std::size_t min_frames(const ModelConfig& cfg) { return static_cast<std::size_t>(cfg.time_shift + cfg.hop + 1); }

}  // namespace nhmm
