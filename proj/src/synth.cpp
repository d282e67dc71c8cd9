#include <cmath>
#include <iomanip>
#include <sstream>

#include "nhmm/training.hpp"

namespace nhmm {

void SynthSpec::validate() const {
  if (num_states < 1) throw ValidationError("num_states: must be >= 1");
  if (dim < 1) throw ValidationError("dim: must be >= 1");
  if (!(stay_prob > 0.0 && stay_prob <= 1.0)) throw ValidationError("stay_prob: must be in (0, 1]");
  if (num_states == 1 && stay_prob < 1.0) throw ValidationError("stay_prob: a single state can only stay");
  if (length < 1) throw ValidationError("length: must be >= 1");
  if (count < 1) throw ValidationError("count: must be >= 1");
  if (means.size() != static_cast<std::size_t>(num_states)) throw ValidationError("means: need one row per state");
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (means[i].size() != static_cast<std::size_t>(dim)) throw ValidationError("means: row length must equal dim");
    for (std::size_t j = 0; j < i; ++j) {
      if (means[i] == means[j]) throw ValidationError("means: rows must be pairwise distinct");
    }
  }
}

std::vector<std::vector<double>> random_means(int num_states, int dim, double min_distance, Rng& rng) {
  // Two draws from N(0, s^2 I) sit about s * sqrt(2 dim) apart.
  double scale = 1.25 * min_distance / std::sqrt(2.0 * dim);
  for (;;) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::vector<std::vector<double>> means(num_states, std::vector<double>(dim));
      for (auto& row : means) {
        for (double& v : row) v = scale * rng.standard_normal();
      }
      bool ok = true;
      for (int a = 0; a < num_states && ok; ++a) {
        for (int b = 0; b < a && ok; ++b) {
          double sq = 0.0;
          for (int j = 0; j < dim; ++j) sq += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
          ok = std::sqrt(sq) >= min_distance;
        }
      }
      if (ok) return means;
    }
    scale *= 1.1;
  }
}

std::vector<SynthUtterance> synth_generate(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const int n = spec.num_states;
  std::vector<SynthUtterance> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  const int width = static_cast<int>(std::to_string(spec.count - 1).size());
  for (int u = 0; u < spec.count; ++u) {
    SynthUtterance utt;
    std::ostringstream id;
    id << "synth" << std::setw(width) << std::setfill('0') << u;
    utt.id = id.str();
    utt.frames = FrameMatrix(static_cast<std::size_t>(spec.length), static_cast<std::size_t>(spec.dim));
    utt.states.resize(static_cast<std::size_t>(spec.length));
    int z = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    for (int t = 0; t < spec.length; ++t) {
      if (t > 0 && rng.uniform() >= spec.stay_prob) {
        // Uniform over the other n-1 states.
        const int step = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
        z = (z + step) % n;
      }
      utt.states[static_cast<std::size_t>(t)] = z;
      for (int j = 0; j < spec.dim; ++j) {
        utt.frames.at(static_cast<std::size_t>(t), static_cast<std::size_t>(j)) =
            static_cast<float>(spec.means[z][j] + rng.standard_normal());
      }
    }
    out.push_back(std::move(utt));
  }
  return out;
}

std::vector<Segment> states_to_segments(std::span<const int> states) {
  std::vector<Segment> segs;
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (t == 0 || states[t] != states[t - 1]) {
      segs.push_back({t, t + 1, std::to_string(states[t])});
    } else {
      segs.back().end = t + 1;
    }
  }
  return segs;
}

std::filesystem::path write_synth_dataset(const std::vector<SynthUtterance>& utts, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "features");
  std::filesystem::create_directories(out_dir / "labels");
  std::vector<ManifestEntry> manifest;
  for (const auto& u : utts) {
    const auto feat = out_dir / "features" / (u.id + ".lmf");
    const auto lab = out_dir / "labels" / (u.id + ".lab");
    write_features(feat, u.frames);
    write_labels(lab, states_to_segments(u.states));
    manifest.push_back({u.id, feat, lab});
  }
  const auto path = out_dir / "manifest.tsv";
  write_manifest(path, manifest);
  return path;
}

}  // namespace nhmm
