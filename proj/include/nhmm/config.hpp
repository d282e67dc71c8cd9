#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nhmm/model.hpp"
#include "nhmm/probing.hpp"
#include "nhmm/training.hpp"

namespace nhmm {

inline constexpr const char* kVersion = "nhmm 1.0.0";

// Flat `key = value` configuration shared by every command.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ProbeConfig probe;
  double tolerance_ms = kDefaultToleranceMs;
  double frame_shift_ms = 10.0;
  NmiNorm nmi_norm = NmiNorm::kArithmetic;
  // False until feature_dim is given explicitly; commands then take d from the data.
  bool feature_dim_set = false;

  // Throws ValidationError naming the key on an unknown key or a bad value.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  // Every key with its effective value, in schema order, loadable by parse.
  std::string to_text() const;
};

// Known keys in schema order.
const std::vector<std::string>& config_keys();

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

// `#` starts a comment; blank lines are ignored. Errors carry file:line.
std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& origin);

RunConfig load_run_config(const std::filesystem::path& path);
// Applies `key=value` overrides after the file.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace nhmm
