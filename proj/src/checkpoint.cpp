#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "nhmm/training.hpp"

namespace nhmm {

namespace {

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void tensor(const std::string& name, std::span<const double> values) {
    u32(static_cast<std::uint32_t>(name.size()));
    out_.write(name.data(), static_cast<std::streamsize>(name.size()));
    u32(1);
    u64(values.size());
    for (double v : values) f64(v);
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}

  std::uint64_t uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError(where_ + ": truncated checkpoint");
  }
  std::vector<char> bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }
std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffULL); }
std::uint64_t join(double hi, double lo) {
  return (static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto params = tensors(c.params);
  const auto first = tensors(c.moments.first);
  const auto second = tensors(c.moments.second);

  const ModelConfig& m = c.model;
  const std::vector<double> model_cfg = {
      double(m.num_states), double(m.time_shift),     double(m.hop),
      double(m.feature_dim), double(m.encoder.layers), double(m.encoder.hidden),
      m.encoder.cell == CellType::kLstm ? 1.0 : 0.0, m.variant == Variant::kVqApc ? 1.0 : 0.0, double(m.tap_layer)};
  const TrainConfig& t = c.train;
  const std::vector<double> train_cfg = {t.learning_rate, double(t.epochs), double(t.batch_size),
                                         double(hi32(t.seed)), double(lo32(t.seed)), t.adam_beta1,
                                         t.adam_beta2, t.adam_eps, t.grad_clip_norm};
  const std::vector<double> state = {double(c.epoch), double(c.moments.step), double(hi32(c.rng_state)),
                                     double(lo32(c.rng_state))};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  Writer w(out);
  out.write("NHMM", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(3 + 3 * params.size()));
  w.tensor("config.model", model_cfg);
  w.tensor("config.train", train_cfg);
  w.tensor("state", state);
  for (const auto& p : params) w.tensor("param." + p.name, p.values);
  for (const auto& p : first) w.tensor("adam.m." + p.name, p.values);
  for (const auto& p : second) w.tensor("adam.v." + p.name, p.values);
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string where = path.string();
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, where);
  if (r.str(4) != "NHMM") throw DataError(where + ": bad magic");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) throw DataError(where + ": unsupported version " + std::to_string(version));
  const auto count = r.uint(4);
  std::map<std::string, RawTensor> raw;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.uint(4));
    RawTensor t;
    const auto rank = r.uint(4);
    std::uint64_t size = 1;
    for (std::uint64_t d = 0; d < rank; ++d) size *= t.dims.emplace_back(r.uint(8));
    t.values.resize(size);
    for (double& v : t.values) v = std::bit_cast<double>(r.uint(8));
    raw[name] = std::move(t);
  }
  if (!r.at_end()) throw DataError(where + ": trailing bytes");

  auto get = [&](const std::string& name, std::size_t size) -> const std::vector<double>& {
    auto it = raw.find(name);
    if (it == raw.end()) throw DataError(where + ": missing tensor " + name);
    if (it->second.values.size() != size) throw DataError(where + ": tensor " + name + " has wrong size");
    return it->second.values;
  };

  Checkpoint c;
  const auto& mc = get("config.model", 9);
  c.model.num_states = static_cast<int>(mc[0]);
  c.model.time_shift = static_cast<int>(mc[1]);
  c.model.hop = static_cast<int>(mc[2]);
  c.model.feature_dim = static_cast<int>(mc[3]);
  c.model.encoder.layers = static_cast<int>(mc[4]);
  c.model.encoder.hidden = static_cast<int>(mc[5]);
  c.model.encoder.cell = mc[6] != 0.0 ? CellType::kLstm : CellType::kElman;
  c.model.variant = mc[7] != 0.0 ? Variant::kVqApc : Variant::kNeuralHmm;
  c.model.tap_layer = static_cast<int>(mc[8]);
  c.model.validate();

  const auto& tc = get("config.train", 9);
  c.train.learning_rate = tc[0];
  c.train.epochs = static_cast<int>(tc[1]);
  c.train.batch_size = static_cast<int>(tc[2]);
  c.train.seed = join(tc[3], tc[4]);
  c.train.adam_beta1 = tc[5];
  c.train.adam_beta2 = tc[6];
  c.train.adam_eps = tc[7];
  c.train.grad_clip_norm = tc[8];

  const auto& st = get("state", 4);
  c.epoch = static_cast<int>(st[0]);
  c.moments.step = static_cast<std::int64_t>(st[1]);
  c.rng_state = join(st[2], st[3]);

  c.params = zero_params(c.model);
  c.moments.first = zero_params(c.model);
  c.moments.second = zero_params(c.model);
  auto fill = [&](ModelParams& p, const std::string& prefix) {
    for (auto& view : tensors(p)) {
      const auto& src = get(prefix + view.name, view.values.size());
      std::copy(src.begin(), src.end(), view.values.begin());
    }
  };
  fill(c.params, "param.");
  fill(c.moments.first, "adam.m.");
  fill(c.moments.second, "adam.v.");
  return c;
}

}  // namespace nhmm
