#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nhmm/training.hpp"
#include "temp_dir.hpp"

using namespace nhmm;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_states = 3;
  c.time_shift = 2;
  c.hop = 1;
  c.feature_dim = 4;
  c.encoder = {1, 6, CellType::kElman};
  return c;
}

std::vector<Utterance> tiny_data(int count, int length, std::uint64_t seed) {
  SynthSpec spec;
  spec.num_states = 3;
  spec.dim = 4;
  spec.means = {{4, 0, 0, 0}, {0, 4, 0, 0}, {0, 0, 4, 0}};
  spec.length = length;
  spec.count = count;
  Rng rng(seed);
  std::vector<Utterance> out;
  for (const auto& s : synth_generate(spec, rng)) out.push_back({s.id, s.frames.to_double()});
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto x = tensors(a), y = tensors(b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::equal(x[i].values.begin(), x[i].values.end(), y[i].values.begin(), y[i].values.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("first Adam step by hand") {
  const ModelConfig c = tiny_config();
  TrainConfig t;
  t.learning_rate = 0.01;
  ModelParams p = zero_params(c);
  ModelParams g = zero_params(c);
  g.U(0, 0) = 1.0;
  AdamMoments m = zero_moments(c);
  adam_step(p, g, m, t);
  // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1
  CHECK(p.U(0, 0) == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p.U(0, 1) == 0.0);
  CHECK(m.step == 1);
  CHECK(m.first.U(0, 0) == doctest::Approx(0.1));
  CHECK(m.second.U(0, 0) == doctest::Approx(0.001));
}

TEST_CASE("second Adam step by hand") {
  const ModelConfig c = tiny_config();
  TrainConfig t;
  t.learning_rate = 0.01;
  ModelParams p = zero_params(c), g = zero_params(c);
  AdamMoments m = zero_moments(c);
  g.V(1, 1) = 2.0;
  adam_step(p, g, m, t);
  g.V(1, 1) = -1.0;
  adam_step(p, g, m, t);
  const double m2 = 0.9 * 0.2 + 0.1 * -1.0;
  const double v2 = 0.999 * 0.004 + 0.001 * 1.0;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  // First step: m_hat = 2, v_hat = 4.
  const double first = -0.01 * 2.0 / (2.0 + 1e-8);
  CHECK(p.V(1, 1) == doctest::Approx(first - 0.01 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-13));
}

TEST_CASE("gradients are clipped by global norm") {
  const ModelConfig c = tiny_config();
  TrainConfig t;
  ModelParams p = zero_params(c), g = zero_params(c);
  g.U(0, 0) = 30.0;
  g.V(0, 0) = 40.0;
  CHECK(global_norm(g) == doctest::Approx(50.0));
  AdamMoments m = zero_moments(c);
  adam_step(p, g, m, t);
  // Clipped to norm 5: entries 3 and 4.
  CHECK(m.first.U(0, 0) == doctest::Approx(0.1 * 3.0).epsilon(1e-14));
  CHECK(m.first.V(0, 0) == doctest::Approx(0.1 * 4.0).epsilon(1e-14));
}

TEST_CASE("non-finite gradient is rejected with the tensor name") {
  const ModelConfig c = tiny_config();
  ModelParams p = zero_params(c), g = zero_params(c);
  g.layers[0].wh(1, 1) = std::nan("");
  AdamMoments m = zero_moments(c);
  try {
    adam_step(p, g, m, TrainConfig{});
    FAIL("expected a throw");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("layer0.wh") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is exact") {
  TempDir dir;
  ModelConfig mc = tiny_config();
  mc.encoder.cell = CellType::kLstm;
  mc.variant = Variant::kVqApc;
  mc.tap_layer = 1;
  TrainConfig tc;
  tc.seed = 0xDEADBEEFCAFEF00DULL;
  tc.learning_rate = 3e-4;
  Checkpoint c = initial_checkpoint(mc, tc);
  c.moments.first.U(1, 1) = 0.125;
  c.moments.step = 17;
  c.epoch = 3;
  save_checkpoint(dir / "c.nhmm", c);
  const Checkpoint r = load_checkpoint(dir / "c.nhmm");
  CHECK(r.model.encoder.cell == CellType::kLstm);
  CHECK(r.model.variant == Variant::kVqApc);
  CHECK(r.model.tap_layer == 1);
  CHECK(r.train.seed == tc.seed);
  CHECK(r.train.learning_rate == tc.learning_rate);
  CHECK(r.epoch == 3);
  CHECK(r.rng_state == c.rng_state);
  CHECK(r.moments.step == 17);
  CHECK(same_params(r.params, c.params));
  CHECK(same_params(r.moments.first, c.moments.first));
  save_checkpoint(dir / "d.nhmm", r);
  CHECK(slurp(dir / "c.nhmm") == slurp(dir / "d.nhmm"));
}

TEST_CASE("corrupt checkpoints are reported") {
  TempDir dir;
  save_checkpoint(dir / "c.nhmm", initial_checkpoint(tiny_config(), TrainConfig{}));
  const std::string bytes = slurp(dir / "c.nhmm");
  auto spit = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir / name, std::ios::binary) << b;
    return dir / name;
  };
  CHECK_THROWS_AS(load_checkpoint(spit("magic", "XHMM" + bytes.substr(4))), DataError);
  std::string v2 = bytes;
  v2[4] = 2;
  CHECK_THROWS_WITH_AS(load_checkpoint(spit("v2", v2)), doctest::Contains("unsupported version 2"), DataError);
  CHECK_THROWS_WITH_AS(load_checkpoint(spit("cut", bytes.substr(0, bytes.size() - 3))), doctest::Contains("truncated"),
                       DataError);
}

TEST_CASE("training is deterministic and lowers the loss") {
  const auto data = tiny_data(12, 40, 4);
  TrainConfig tc;
  tc.seed = 9;
  tc.epochs = 4;
  tc.learning_rate = 1e-2;
  tc.batch_size = 3;
  const TrainResult a = train(data, initial_checkpoint(tiny_config(), tc, data));
  const TrainResult b = train(data, initial_checkpoint(tiny_config(), tc, data));
  REQUIRE(a.log.size() == 16);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
  CHECK(same_params(a.checkpoint.params, b.checkpoint.params));
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
  TempDir dir;
  const auto data = tiny_data(6, 30, 5);
  TrainConfig tc;
  tc.seed = 2;
  tc.epochs = 3;
  tc.batch_size = 2;
  const TrainResult full = train(data, initial_checkpoint(tiny_config(), tc, data));

  TrainConfig first = tc;
  first.epochs = 1;
  TrainOptions opts;
  opts.out_dir = dir.path();
  train(data, initial_checkpoint(tiny_config(), first, data), opts);
  Checkpoint mid = load_checkpoint(epoch_checkpoint_path(dir.path(), 1));
  mid.train.epochs = 3;
  const TrainResult rest = train(data, mid, opts);
  CHECK(same_params(rest.checkpoint.params, full.checkpoint.params));
  CHECK(rest.checkpoint.moments.step == full.checkpoint.moments.step);

  // loss.log holds all three epochs after the resume.
  std::ifstream log(dir / "loss.log");
  std::string line;
  std::set<int> epochs;
  while (std::getline(log, line)) epochs.insert(std::stoi(line));
  CHECK(epochs == std::set<int>{1, 2, 3});

  // A fresh run into the same directory needs force.
  CHECK_THROWS_AS(train(data, initial_checkpoint(tiny_config(), first, data), opts), ValidationError);
  opts.force = true;
  CHECK_NOTHROW(train(data, initial_checkpoint(tiny_config(), first, data), opts));
}

TEST_CASE("short utterances are skipped with a warning") {
  auto data = tiny_data(3, 30, 6);
  data[1].frames.conservativeResize(3, Eigen::NoChange);  // < k + H + 1 = 4
  TrainConfig tc;
  tc.epochs = 1;
  std::ostringstream warn;
  TrainOptions opts;
  opts.warn_stream = &warn;
  const TrainResult r = train(data, initial_checkpoint(tiny_config(), tc), opts);
  CHECK(r.skipped == std::vector<std::string>{data[1].id});
  CHECK(warn.str().find(data[1].id) != std::string::npos);
  CHECK(r.log.size() == 2);
}

TEST_CASE("log line format") {
  CHECK(format_step({2, 15, 198, 12.5}) == "2 15 198 12.5");
}

TEST_CASE("seed_emission_means puts one mean in each well separated cluster") {
  const auto data = tiny_data(5, 100, 8);
  ModelConfig c = tiny_config();
  Rng rng(3);
  ModelParams p = param_init(c, rng);
  seed_emission_means(p, data, rng);
  std::set<int> clusters;
  for (Eigen::Index j = 0; j < 3; ++j) {
    const auto col = p.V.col(j);
    Eigen::Index arg = 0;
    col.head(3).maxCoeff(&arg);
    clusters.insert(static_cast<int>(arg));
  }
  CHECK(clusters.size() == 3);
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.num_states = 2;
  spec.dim = 2;
  spec.means = {{0, 0}, {10, 0}};
  spec.stay_prob = 1.0;
  spec.length = 50;
  spec.count = 3;
  Rng rng(1);
  const auto utts = synth_generate(spec, rng);
  REQUIRE(utts.size() == 3);
  for (const auto& u : utts) {
    CHECK(u.frames.num_frames == 50);
    CHECK(std::set<int>(u.states.begin(), u.states.end()).size() == 1);
    CHECK(states_to_segments(u.states).size() == 1);
  }
  spec.stay_prob = 0.0;
  CHECK_THROWS_AS(synth_generate(spec, rng), ValidationError);

  const std::vector<int> z = {0, 0, 1, 1, 1, 0};
  const auto segs = states_to_segments(z);
  REQUIRE(segs.size() == 3);
  CHECK(segs[1].start == 2);
  CHECK(segs[1].end == 5);
  CHECK(segs[2].label == "0");
}

TEST_CASE("random means respect the minimum distance") {
  Rng rng(4);
  const auto m = random_means(5, 3, 6.0, rng);
  for (std::size_t a = 0; a < m.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < 3; ++j) sq += (m[a][j] - m[b][j]) * (m[a][j] - m[b][j]);
      CHECK(std::sqrt(sq) >= 6.0);
    }
  }
}
