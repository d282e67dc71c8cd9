#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nhmm/features.hpp"
#include "nhmm/model.hpp"

namespace nhmm {

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 5;
  int batch_size = 1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 5.0;  // <= 0 disables clipping

  void validate() const;
};

struct AdamMoments {
  ModelParams first;
  ModelParams second;
  std::int64_t step = 0;  // number of updates applied so far
};

AdamMoments zero_moments(const ModelConfig& cfg);

double global_norm(const ModelParams& grads);

/// Global-norm clipping, then one bias-corrected Adam update at step
/// moments.step + 1. Throws ValidationError naming the tensor on a
/// non-finite gradient or a shape mismatch.
void adam_step(ModelParams& params, ModelParams grads, AdamMoments& moments, const TrainConfig& cfg);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ModelParams params;
  AdamMoments moments;
  int epoch = 0;  // completed epochs
  std::uint64_t rng_state = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "NHMM", u32 version, u32 tensor count, then per tensor: u32 name length,
// name bytes, u32 rank, u64 dims, float64 values. All little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct Utterance {
  std::string id;
  RowMatrix frames;  // T x d, double
};

std::vector<Utterance> load_utterances(const std::vector<ManifestEntry>& manifest);

struct StepRecord {
  int epoch = 0;
  std::int64_t step = 0;
  std::size_t frames = 0;
  double loss = 0.0;  // per modeled frame
};

std::string format_step(const StepRecord& r);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  std::vector<double> epoch_loss;  // frame-weighted mean per epoch run here
  std::vector<std::string> skipped;
};

struct TrainOptions {
  // Directory for loss.log and per-epoch checkpoints; empty = no files.
  std::filesystem::path out_dir;
  bool force = false;
  std::ostream* log_stream = nullptr;   // step lines, as written to loss.log
  std::ostream* warn_stream = nullptr;  // skipped utterances
};

Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train);
// As above, then seeds the emission means from the data with seed_emission_means.
Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train, const std::vector<Utterance>& data);

// Greedy k-means++ seeding: column 0 of V is a uniformly drawn frame; each
// further column is the best of 2 + ln(N) frames drawn with probability
// proportional to squared distance to the nearest chosen column. At most
// kSeedPool frames, drawn uniformly, are considered.
inline constexpr std::size_t kSeedPool = 20000;
void seed_emission_means(ModelParams& params, const std::vector<Utterance>& data, Rng& rng);

/// Runs epochs start.epoch+1 .. start.train.epochs. Each epoch shuffles the
/// utterance order with the checkpointed RNG, then takes one Adam step per
/// batch on the summed loss divided by the batch's modeled frames.
TrainResult train(const std::vector<Utterance>& data, Checkpoint start, const TrainOptions& opts = {});

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& out_dir, int epoch);

// ---- synthetic data ----------------------------------------------------------

struct SynthSpec {
  int num_states = 3;
  int dim = 8;
  std::vector<std::vector<double>> means;  // num_states rows of length dim
  double stay_prob = 0.9;
  int length = 200;
  int count = 200;

  void validate() const;
};

/// Means drawn from N(0, scale^2 I) and redrawn until every pair is at
/// least min_distance apart.
std::vector<std::vector<double>> random_means(int num_states, int dim, double min_distance, Rng& rng);

struct SynthUtterance {
  std::string id;
  FrameMatrix frames;
  std::vector<int> states;
};

// Uniform first state, stay on the diagonal with stay_prob, otherwise move
// to one of the other states uniformly; x_t ~ N(mean_{z_t}, I).
std::vector<SynthUtterance> synth_generate(const SynthSpec& spec, Rng& rng);

std::vector<Segment> states_to_segments(std::span<const int> states);

// Writes features/<id>.lmf, labels/<id>.lab and manifest.tsv; returns the manifest path.
std::filesystem::path write_synth_dataset(const std::vector<SynthUtterance>& utts, const std::filesystem::path& out_dir);

}  // namespace nhmm
