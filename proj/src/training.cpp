#include "nhmm/training.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace nhmm {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate: must be > 0");
  if (epochs < 1) throw ValidationError("epochs: must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ValidationError("adam_beta1: must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ValidationError("adam_beta2: must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps: must be > 0");
}

AdamMoments zero_moments(const ModelConfig& cfg) { return {zero_params(cfg), zero_params(cfg), 0}; }

double global_norm(const ModelParams& grads) {
  double sq = 0.0;
  for (const auto& t : tensors(grads)) {
    for (double g : t.values) sq += g * g;
  }
  return std::sqrt(sq);
}

void adam_step(ModelParams& params, ModelParams grads, AdamMoments& moments, const TrainConfig& cfg) {
  auto p = tensors(params);
  auto g = tensors(grads);
  auto m1 = tensors(moments.first);
  auto m2 = tensors(moments.second);
  if (g.size() != p.size() || m1.size() != p.size() || m2.size() != p.size()) {
    throw ValidationError("adam_step: parameter/gradient tensor count mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i].values.size() != p[i].values.size() || m1[i].values.size() != p[i].values.size() ||
        m2[i].values.size() != p[i].values.size()) {
      throw ValidationError("adam_step: shape mismatch for " + p[i].name);
    }
    for (double v : g[i].values) {
      if (!std::isfinite(v)) throw ValidationError("adam_step: non-finite gradient in " + g[i].name);
    }
  }
  const double norm = global_norm(grads);
  const double scale = (cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm) ? cfg.grad_clip_norm / norm : 1.0;

  const std::int64_t t = ++moments.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t q = 0; q < p[i].values.size(); ++q) {
      const double gq = g[i].values[q] * scale;
      double& m = m1[i].values[q];
      double& v = m2[i].values[q];
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * gq;
      v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * gq * gq;
      p[i].values[q] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
    }
  }
}

std::vector<Utterance> load_utterances(const std::vector<ManifestEntry>& manifest) {
  std::vector<Utterance> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) out.push_back({e.utterance_id, read_features(e.feature_path).to_double()});
  return out;
}

std::string format_step(const StepRecord& r) {
  std::ostringstream s;
  s.precision(17);
  s << r.epoch << ' ' << r.step << ' ' << r.frames << ' ' << r.loss;
  return s.str();
}

Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  Checkpoint c;
  c.model = model;
  c.train = train;
  Rng rng(train.seed);
  c.params = param_init(model, rng);
  c.moments = zero_moments(model);
  c.epoch = 0;
  c.rng_state = rng.state();
  return c;
}

Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train, const std::vector<Utterance>& data) {
  Checkpoint c = initial_checkpoint(model, train);
  Rng rng(0);
  rng.set_state(c.rng_state);
  seed_emission_means(c.params, data, rng);
  c.rng_state = rng.state();
  return c;
}

void seed_emission_means(ModelParams& params, const std::vector<Utterance>& data, Rng& rng) {
  const Eigen::Index d = params.V.rows(), n = params.V.cols();
  std::vector<const double*> frames;
  for (const auto& u : data) {
    if (u.frames.cols() != d) throw ValidationError(u.id + ": feature dim " + std::to_string(u.frames.cols()) + " != " + std::to_string(d));
    for (Eigen::Index t = 0; t < u.frames.rows(); ++t) frames.push_back(u.frames.row(t).data());
  }
  if (frames.empty()) throw ValidationError("no frames to seed emission means from");
  if (frames.size() > kSeedPool) {
    for (std::size_t i = 0; i < kSeedPool; ++i) std::swap(frames[i], frames[i + rng.below(frames.size() - i)]);
    frames.resize(kSeedPool);
  }
  auto frame = [&](std::size_t i) { return Eigen::Map<const Vector>(frames[i], d); };
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(n)));
  std::vector<double> dist(frames.size(), std::numeric_limits<double>::infinity());
  std::vector<double> cand(frames.size());
  auto draw = [&](double total) {
    if (!(total > 0.0) || std::isinf(total)) return static_cast<std::size_t>(rng.below(frames.size()));
    double r = rng.uniform() * total;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      r -= dist[i];
      if (r < 0.0) return i;
    }
    return frames.size() - 1;
  };
  double total = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    // Greedy variant: several D^2 draws, keep the one that lowers the potential most.
    double best_total = std::numeric_limits<double>::infinity();
    std::vector<double> best_dist;
    std::size_t best = 0;
    for (std::size_t trial = 0; trial < (j == 0 ? 1 : trials); ++trial) {
      const std::size_t c = draw(total);
      double sum = 0.0;
      for (std::size_t i = 0; i < frames.size(); ++i) {
        cand[i] = std::min(dist[i], (frame(i) - frame(c)).squaredNorm());
        sum += cand[i];
      }
      if (sum < best_total) {
        best_total = sum;
        best_dist = cand;
        best = c;
      }
    }
    params.V.col(j) = frame(best);
    dist = std::move(best_dist);
    total = best_total;
  }
}

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& out_dir, int epoch) {
  return out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".nhmm");
}

namespace {

void add_into(ModelParams& acc, const ModelParams& g) {
  auto a = tensors(acc);
  const auto b = tensors(g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t q = 0; q < a[i].values.size(); ++q) a[i].values[q] += b[i].values[q];
  }
}

void scale_params(ModelParams& p, double s) {
  for (auto& t : tensors(p)) {
    for (double& v : t.values) v *= s;
  }
}

void guard_overwrite(const std::filesystem::path& path, bool force) {
  if (!force && std::filesystem::exists(path)) {
    throw ValidationError("refusing to overwrite " + path.string() + " (use --force)");
  }
}

}  // namespace

TrainResult train(const std::vector<Utterance>& data, Checkpoint start, const TrainOptions& opts) {
  start.model.validate();
  start.train.validate();
  const ModelConfig& mcfg = start.model;
  const TrainConfig& tcfg = start.train;

  TrainResult result;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].frames.cols() != mcfg.feature_dim) {
      throw DataError("utterance " + data[i].id + ": feature dim " + std::to_string(data[i].frames.cols()) +
                      " != model feature_dim " + std::to_string(mcfg.feature_dim));
    }
    if (static_cast<std::size_t>(data[i].frames.rows()) < min_frames(mcfg)) {
      result.skipped.push_back(data[i].id);
      if (opts.warn_stream) {
        *opts.warn_stream << "warning: skipping " << data[i].id << " (T=" << data[i].frames.rows()
                          << " < k+H+1=" << min_frames(mcfg) << ")\n";
      }
    } else {
      usable.push_back(i);
    }
  }
  if (usable.empty()) throw DataError("no utterance is long enough to train on");

  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const auto log_path = opts.out_dir / "loss.log";
    if (start.epoch == 0) {
      guard_overwrite(log_path, opts.force);
      log_file.open(log_path, std::ios::trunc);
    } else {
      log_file.open(log_path, std::ios::app);
    }
    if (!log_file) throw DataError("cannot write " + log_path.string());
  }

  Checkpoint& state = start;
  Rng rng(state.rng_state);
  const auto batch = static_cast<std::size_t>(tcfg.batch_size);

  for (int epoch = state.epoch + 1; epoch <= tcfg.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    shuffle(order, rng);
    double epoch_loss = 0.0;
    std::size_t epoch_frames = 0;

    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const auto count = static_cast<std::ptrdiff_t>(b1 - b0);
      std::vector<LossAndGrad> parts(static_cast<std::size_t>(count));
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (count > 1)
      for (std::ptrdiff_t u = 0; u < count; ++u) {
        try {
          parts[static_cast<std::size_t>(u)] =
              total_loss_grad(state.params, data[order[b0 + static_cast<std::size_t>(u)]].frames, mcfg);
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      // Reduce in batch order for bit-stable sums.
      ModelParams grad = zero_params(mcfg);
      double loss = 0.0;
      std::size_t frames = 0;
      for (std::size_t u = 0; u < parts.size(); ++u) {
        add_into(grad, parts[u].grad);
        loss += parts[u].loss;
        frames += modeled_frames(static_cast<std::size_t>(data[order[b0 + u]].frames.rows()), mcfg);
      }
      scale_params(grad, 1.0 / static_cast<double>(frames));
      adam_step(state.params, std::move(grad), state.moments, tcfg);

      const StepRecord rec{epoch, state.moments.step, frames, loss / static_cast<double>(frames)};
      if (!std::isfinite(rec.loss)) throw DataError("non-finite loss at step " + std::to_string(rec.step));
      result.log.push_back(rec);
      const std::string line = format_step(rec);
      if (log_file.is_open()) log_file << line << '\n';
      if (opts.log_stream) *opts.log_stream << line << '\n';
      epoch_loss += loss;
      epoch_frames += frames;
    }

    result.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_frames));
    state.epoch = epoch;
    state.rng_state = rng.state();
    if (!opts.out_dir.empty()) {
      log_file.flush();
      const auto path = epoch_checkpoint_path(opts.out_dir, epoch);
      guard_overwrite(path, opts.force);
      save_checkpoint(path, state);
    }
  }
  result.checkpoint = std::move(state);
  return result;
}

}  // namespace nhmm
