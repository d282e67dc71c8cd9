#include "nhmm/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace nhmm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ValidationError(key + ": expected an integer, got '" + v + "'");
  return out;
}

int to_int_in(const std::string& key, const std::string& v, long long lo, long long hi) {
  const long long x = to_int(key, v);
  if (x < lo || x > hi) {
    throw ValidationError(key + ": " + v + " is out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<int>(x);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected a number, got '" + v + "'");
  }
}

double positive(const std::string& key, double x) {
  if (!(x > 0.0)) throw ValidationError(key + ": must be > 0");
  return x;
}

double unit_interval(const std::string& key, double x) {
  if (!(x >= 0.0 && x < 1.0)) throw ValidationError(key + ": must be in [0, 1)");
  return x;
}

constexpr int kMaxInt = 1 << 24;

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "num_states",   "time_shift",     "hop",           "feature_dim",    "encoder_layers", "hidden_dim",
      "cell",         "variant",        "tap_layer",     "learning_rate",  "epochs",         "batch_size",
      "seed",         "adam_beta1",     "adam_beta2",    "adam_eps",       "grad_clip_norm", "probe_learning_rate",
      "probe_epochs", "probe_batch_size", "tolerance_ms", "frame_shift_ms", "nmi_norm",
  };
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "num_states") model.num_states = to_int_in(key, v, 1, kMaxInt);
  else if (key == "time_shift") model.time_shift = to_int_in(key, v, 1, kMaxInt);
  else if (key == "hop") model.hop = to_int_in(key, v, 1, kMaxInt);
  else if (key == "feature_dim") {
    model.feature_dim = to_int_in(key, v, 1, kMaxInt);
    feature_dim_set = true;
  }
  else if (key == "encoder_layers") model.encoder.layers = to_int_in(key, v, 1, 64);
  else if (key == "hidden_dim") model.encoder.hidden = to_int_in(key, v, 1, kMaxInt);
  else if (key == "cell") model.encoder.cell = parse_cell(v);
  else if (key == "variant") model.variant = parse_variant(v);
  else if (key == "tap_layer") model.tap_layer = to_int_in(key, v, 0, 64);
  else if (key == "learning_rate") train.learning_rate = positive(key, to_double(key, v));
  else if (key == "epochs") train.epochs = to_int_in(key, v, 1, kMaxInt);
  else if (key == "batch_size") train.batch_size = to_int_in(key, v, 1, kMaxInt);
  else if (key == "seed") {
    const long long s = to_int(key, v);
    if (s < 0) throw ValidationError("seed: must be >= 0");
    train.seed = static_cast<std::uint64_t>(s);
    probe.seed = train.seed;
  }
  else if (key == "adam_beta1") train.adam_beta1 = unit_interval(key, to_double(key, v));
  else if (key == "adam_beta2") train.adam_beta2 = unit_interval(key, to_double(key, v));
  else if (key == "adam_eps") train.adam_eps = positive(key, to_double(key, v));
  else if (key == "grad_clip_norm") train.grad_clip_norm = to_double(key, v);
  else if (key == "probe_learning_rate") probe.learning_rate = positive(key, to_double(key, v));
  else if (key == "probe_epochs") probe.epochs = to_int_in(key, v, 1, kMaxInt);
  else if (key == "probe_batch_size") probe.batch_size = to_int_in(key, v, 1, kMaxInt);
  else if (key == "tolerance_ms") tolerance_ms = positive(key, to_double(key, v));
  else if (key == "frame_shift_ms") frame_shift_ms = positive(key, to_double(key, v));
  else if (key == "nmi_norm") nmi_norm = parse_nmi_norm(v);
  else throw ValidationError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

std::string RunConfig::to_text() const {
  std::ostringstream s;
  s.precision(17);
  s << "# " << kVersion << " effective configuration\n";
  s << "num_states = " << model.num_states << '\n'
    << "time_shift = " << model.time_shift << '\n'
    << "hop = " << model.hop << '\n'
    << "feature_dim = " << model.feature_dim << '\n'
    << "encoder_layers = " << model.encoder.layers << '\n'
    << "hidden_dim = " << model.encoder.hidden << '\n'
    << "cell = " << to_string(model.encoder.cell) << '\n'
    << "variant = " << to_string(model.variant) << '\n'
    << "tap_layer = " << model.tap_layer << '\n'
    << "learning_rate = " << train.learning_rate << '\n'
    << "epochs = " << train.epochs << '\n'
    << "batch_size = " << train.batch_size << '\n'
    << "seed = " << train.seed << '\n'
    << "adam_beta1 = " << train.adam_beta1 << '\n'
    << "adam_beta2 = " << train.adam_beta2 << '\n'
    << "adam_eps = " << train.adam_eps << '\n'
    << "grad_clip_norm = " << train.grad_clip_norm << '\n'
    << "probe_learning_rate = " << probe.learning_rate << '\n'
    << "probe_epochs = " << probe.epochs << '\n'
    << "probe_batch_size = " << probe.batch_size << '\n'
    << "tolerance_ms = " << tolerance_ms << '\n'
    << "frame_shift_ms = " << frame_shift_ms << '\n'
    << "nmi_norm = "
    << (nmi_norm == NmiNorm::kMax ? "max" : nmi_norm == NmiNorm::kSqrt ? "sqrt" : "arithmetic") << '\n';
  return s.str();
}

std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& origin) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    out.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
  }
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  for (const auto& kv : parse_key_values(buf.str(), path.string())) {
    try {
      cfg.set(kv.key, kv.value);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(kv.line) + ": " + e.what());
    }
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + o + "': expected key=value");
    cfg.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

}  // namespace nhmm
