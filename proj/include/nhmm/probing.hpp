#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nhmm/features.hpp"
#include "nhmm/model.hpp"

namespace nhmm {

// Codes for frames k..T-1 of one utterance.
struct CodeSequence {
  std::vector<int> codes;
  int first_frame = 0;  // = k
  double frame_shift_ms = 10.0;
};

/// Viterbi decoding. neural_hmm: one Viterbi pass per hop chain, each node's
/// state written back to the frame it emits. vq_apc: per-frame argmax of the
/// code posterior (ties to the smallest index).
CodeSequence decode_codes(const ModelParams& p, const RowMatrix& frames, const ModelConfig& cfg);

enum class NmiNorm { kArithmetic, kMax, kSqrt };
NmiNorm parse_nmi_norm(const std::string& s);

/// 2 I(Z;Y) / (H(Z) + H(Y)) by default, natural log, 0 log 0 = 0; 0 when
/// either entropy vanishes. Labels are arbitrary non-negative ids.
double nmi(std::span<const int> codes, std::span<const int> labels, NmiNorm norm = NmiNorm::kArithmetic);

// Same statistic from an explicit contingency table of counts.
double nmi_from_table(const std::vector<std::vector<double>>& counts, NmiNorm norm = NmiNorm::kArithmetic);

/// Index t is a boundary iff codes[t] != codes[t-1].
std::vector<std::size_t> boundaries_from_codes(std::span<const int> codes);

struct SegScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t hits = 0;
  std::size_t hyp_total = 0;
  std::size_t ref_total = 0;
};

inline constexpr double kDefaultToleranceMs = 20.0;

/// One-to-one boundary matching within tol_ms (inclusive). Walking both lists
/// in time order, each reference boundary takes the earliest unmatched
/// hypothesis inside its window, which yields a maximum matching.
/// Empty denominators give 0, except both lists empty gives P = R = F1 = 1.
SegScore seg_prf(std::span<const std::size_t> hyp, std::span<const std::size_t> ref,
                 double tol_ms = kDefaultToleranceMs, double frame_shift_ms = 10.0);

// Combines per-utterance counts: ratios of summed hits and totals.
SegScore seg_total(std::span<const SegScore> parts);

// ---- linear phone probe ------------------------------------------------------

struct ProbeConfig {
  double learning_rate = 1e-3;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct LinearProbe {
  RowMatrix W;  // classes x D
  Vector b;     // classes
  int predict(std::span<const double> x) const;
};

/// Multinomial logistic regression with Adam on shuffled minibatches.
/// reps: frames x D, labels in [0, num_classes).
LinearProbe probe_train(const RowMatrix& reps, std::span<const int> labels, int num_classes,
                        const ProbeConfig& cfg = {});

// Fraction of misclassified frames.
double probe_eval(const LinearProbe& probe, const RowMatrix& reps, std::span<const int> labels);

// Maps label strings to dense ids in first-seen order.
class LabelVocab {
 public:
  int id(const std::string& label);
  int size() const { return static_cast<int>(ids_.size()); }

 private:
  std::map<std::string, int> ids_;
};

// ---- plain-text reports --------------------------------------------------------

// `utterance_id c0 c1 ...` per line.
void write_codes(const std::filesystem::path& path, const std::vector<std::pair<std::string, CodeSequence>>& codes);
std::vector<std::pair<std::string, std::vector<int>>> read_codes(const std::filesystem::path& path);

}  // namespace nhmm
