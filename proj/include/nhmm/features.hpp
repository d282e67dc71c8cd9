#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nhmm/numerics.hpp"

namespace nhmm {

struct Waveform {
  std::vector<std::int16_t> samples;
  int sample_rate = 16000;
};

// T x d feature matrix stored row-major as float32, the on-disk width, so
// that LMF1 round trips are exact.
struct FrameMatrix {
  std::size_t num_frames = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  FrameMatrix() = default;
  FrameMatrix(std::size_t t, std::size_t d) : num_frames(t), dim(d), data(t * d, 0.0f) {}

  float& at(std::size_t t, std::size_t j) { return data[t * dim + j]; }
  float at(std::size_t t, std::size_t j) const { return data[t * dim + j]; }
  std::span<const float> row(std::size_t t) const { return {data.data() + t * dim, dim}; }

  RowMatrix to_double() const;
  static FrameMatrix from_double(const RowMatrix& m);
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct MelConfig {
  int sample_rate = 16000;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  int num_mel = 40;
  double log_floor = 1e-10;

  int window_samples() const;
  int shift_samples() const;
  // Next power of two >= window_samples().
  int fft_size() const;
};

Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

// Mel scale m = 2595 log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// num_mel x (fft_size/2 + 1) triangular filter weights spanning 0 Hz to Nyquist.
RowMatrix mel_filterbank(const MelConfig& cfg);

/// Hann-windowed magnitude spectrum through the Mel filterbank, natural log
/// with a floor. No pre-emphasis. T = 1 + (S - window) / shift.
FrameMatrix log_mel(const Waveform& w, const MelConfig& cfg = {});

inline constexpr double kMinStd = 1e-8;

NormStats compute_norm_stats(std::span<const FrameMatrix> dataset);
FrameMatrix normalize(const FrameMatrix& f, const NormStats& s);

void write_norm_stats(const std::filesystem::path& path, const NormStats& s);
NormStats read_norm_stats(const std::filesystem::path& path);

// LMF1: "LMF1", u32 T, u32 d, T*d float32, all little-endian.
void write_features(const std::filesystem::path& path, const FrameMatrix& f);
FrameMatrix read_features(const std::filesystem::path& path);

struct Segment {
  std::size_t start = 0;  // frame index
  std::size_t end = 0;    // exclusive
  std::string label;
};

// One `start end label` per line; must be sorted, non-overlapping, contiguous.
std::vector<Segment> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<Segment>& segs);
// Expands segments into one label per frame in [segs.front().start, segs.back().end).
std::vector<std::string> frame_labels(const std::vector<Segment>& segs);

struct ManifestEntry {
  std::string utterance_id;
  std::filesystem::path feature_path;
  std::optional<std::filesystem::path> label_path;
};

// `utterance_id<TAB>feature_path[<TAB>label_path]`; relative paths resolve
// against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace nhmm
