#include <doctest.h>

#include <fstream>

#include "nhmm/config.hpp"
#include "temp_dir.hpp"

using namespace nhmm;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.model.num_states == 100);
  CHECK(c.model.time_shift == 5);
  CHECK(c.model.hop == 1);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.train.batch_size == 1);
  CHECK(c.train.grad_clip_norm == 5.0);
  CHECK(c.probe.epochs == 10);
  CHECK(c.tolerance_ms == 20.0);
  CHECK(c.nmi_norm == NmiNorm::kArithmetic);
  CHECK_FALSE(c.feature_dim_set);
}

TEST_CASE("file with comments and blank lines") {
  TempDir dir;
  std::ofstream(dir / "run.cfg") << "# neural HMM, hop 7\n\nvariant = neural_hmm\nhop = 7  # frames\n"
                                    "cell=lstm\nlearning_rate = 2.5e-4\nseed = 12\nnmi_norm = max\n";
  const RunConfig c = load_run_config(dir / "run.cfg");
  CHECK(c.model.hop == 7);
  CHECK(c.model.encoder.cell == CellType::kLstm);
  CHECK(c.train.learning_rate == 2.5e-4);
  CHECK(c.train.seed == 12);
  CHECK(c.probe.seed == 12);
  CHECK(c.nmi_norm == NmiNorm::kMax);
}

TEST_CASE("errors name the file, line and key") {
  TempDir dir;
  std::ofstream(dir / "a.cfg") << "hop = 3\nhopp = 4\n";
  CHECK_THROWS_WITH_AS(load_run_config(dir / "a.cfg"), doctest::Contains("a.cfg:2"), ValidationError);
  std::ofstream(dir / "b.cfg") << "epochs = many\n";
  CHECK_THROWS_WITH_AS(load_run_config(dir / "b.cfg"), doctest::Contains("epochs"), ValidationError);
  std::ofstream(dir / "c.cfg") << "hop\n";
  CHECK_THROWS_AS(load_run_config(dir / "c.cfg"), ValidationError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.cfg"), DataError);
}

TEST_CASE("range checks") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("hop", "0"), ValidationError);
  CHECK_THROWS_AS(c.set("learning_rate", "-1"), ValidationError);
  CHECK_THROWS_AS(c.set("adam_beta1", "1"), ValidationError);
  CHECK_THROWS_AS(c.set("variant", "hmm"), ValidationError);
  CHECK_THROWS_AS(c.set("seed", "-3"), ValidationError);
  c.set("feature_dim", "13");
  CHECK(c.feature_dim_set);
}

TEST_CASE("overrides apply after the file") {
  RunConfig c;
  apply_overrides(c, {"num_states=50", "hop = 3"});
  CHECK(c.model.num_states == 50);
  CHECK(c.model.hop == 3);
  CHECK_THROWS_AS(apply_overrides(c, {"hop"}), ValidationError);
}

TEST_CASE("to_text lists every key and reloads to the same config") {
  TempDir dir;
  RunConfig c;
  apply_overrides(c, {"variant=vq_apc", "hop=4", "learning_rate=0.000123", "tolerance_ms=15", "nmi_norm=sqrt",
                      "seed=77", "cell=lstm"});
  const std::string text = c.to_text();
  for (const auto& k : config_keys()) CHECK(text.find(k + " = ") != std::string::npos);
  std::ofstream(dir / "echo.cfg") << text;
  const RunConfig r = load_run_config(dir / "echo.cfg");
  CHECK(r.to_text() == text);
  CHECK(r.model.variant == Variant::kVqApc);
  CHECK(r.train.learning_rate == 0.000123);
}
