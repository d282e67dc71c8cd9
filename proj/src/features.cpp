#include "nhmm/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numbers>
#include <sstream>

#include <fftw3.h>

namespace nhmm {

namespace {

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

std::uint16_t get_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) | (static_cast<unsigned char>(p[1]) << 8));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex g_fftw_plan_mutex;

}  // namespace

RowMatrix FrameMatrix::to_double() const {
  RowMatrix m(num_frames, dim);
  for (std::size_t i = 0; i < data.size(); ++i) m.data()[i] = data[i];
  return m;
}

FrameMatrix FrameMatrix::from_double(const RowMatrix& m) {
  FrameMatrix f(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>(m.data()[i]);
  return f;
}

Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError(where + "not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  Waveform w;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const std::uint32_t size = get_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw DataError(where + "truncated chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw DataError(where + "short fmt chunk");
      const char* f = bytes.data() + body;
      const auto format = get_u16(f);
      const auto channels = get_u16(f + 2);
      const auto rate = get_u32(f + 4);
      const auto bits = get_u16(f + 14);
      if (format != 1) throw DataError(where + "unsupported encoding (format tag " + std::to_string(format) + "), need PCM");
      if (channels != 1) throw DataError(where + "need mono audio, got " + std::to_string(channels) + " channels");
      if (rate != 16000) throw DataError(where + "need 16000 Hz, got " + std::to_string(rate));
      if (bits != 16) throw DataError(where + "need 16-bit samples, got " + std::to_string(bits));
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw DataError(where + "data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(get_u16(bytes.data() + body + 2 * i));
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw DataError(where + (have_fmt ? "missing data chunk" : "missing fmt chunk"));
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (auto s : w.samples) put_u16(out, static_cast<std::uint16_t>(s));
}

int MelConfig::window_samples() const { return static_cast<int>(std::lround(sample_rate * frame_length_ms / 1000.0)); }
int MelConfig::shift_samples() const { return static_cast<int>(std::lround(sample_rate * frame_shift_ms / 1000.0)); }
int MelConfig::fft_size() const { return static_cast<int>(std::bit_ceil(static_cast<unsigned>(window_samples()))); }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

RowMatrix mel_filterbank(const MelConfig& cfg) {
  const int nfft = cfg.fft_size();
  const int nbins = nfft / 2 + 1;
  const double nyquist = cfg.sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(cfg.num_mel + 2);
  for (int i = 0; i < cfg.num_mel + 2; ++i) edges[i] = mel_to_hz(mel_hi * i / (cfg.num_mel + 1));

  RowMatrix fb = RowMatrix::Zero(cfg.num_mel, nbins);
  for (int m = 0; m < cfg.num_mel; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int b = 0; b < nbins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / nfft;
      if (f > lo && f <= mid) {
        fb(m, b) = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        fb(m, b) = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

FrameMatrix log_mel(const Waveform& w, const MelConfig& cfg) {
  const int win = cfg.window_samples();
  const int shift = cfg.shift_samples();
  const int nfft = cfg.fft_size();
  const int nbins = nfft / 2 + 1;
  if (static_cast<int>(w.samples.size()) < win) {
    throw ValidationError("waveform too short: " + std::to_string(w.samples.size()) + " samples < window of " +
                          std::to_string(win));
  }
  const std::size_t num_frames = 1 + (w.samples.size() - win) / shift;
  const RowMatrix fb = mel_filterbank(cfg);

  // Symmetric Hann window.
  std::vector<double> hann(win);
  for (int n = 0; n < win; ++n) hann[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (win - 1));

  double* in = fftw_alloc_real(nfft);
  fftw_complex* spec = fftw_alloc_complex(nbins);
  fftw_plan plan;
  {
    std::lock_guard lock(g_fftw_plan_mutex);
    plan = fftw_plan_dft_r2c_1d(nfft, in, spec, FFTW_ESTIMATE);
  }

  FrameMatrix out(num_frames, static_cast<std::size_t>(cfg.num_mel));
  Vector mag(nbins);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const std::size_t off = t * shift;
    for (int n = 0; n < win; ++n) in[n] = hann[n] * (w.samples[off + n] / 32768.0);
    for (int n = win; n < nfft; ++n) in[n] = 0.0;
    fftw_execute(plan);
    for (int b = 0; b < nbins; ++b) mag[b] = std::hypot(spec[b][0], spec[b][1]);
    const Vector energies = fb * mag;
    for (int m = 0; m < cfg.num_mel; ++m) {
      out.at(t, m) = static_cast<float>(std::log(std::max(energies[m], cfg.log_floor)));
    }
  }

  {
    std::lock_guard lock(g_fftw_plan_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(spec);
  fftw_free(in);
  return out;
}

NormStats compute_norm_stats(std::span<const FrameMatrix> dataset) {
  std::size_t dim = 0, total = 0;
  for (const auto& f : dataset) {
    if (f.num_frames == 0) continue;
    if (dim == 0) dim = f.dim;
    if (f.dim != dim) throw ValidationError("compute_norm_stats: dimension mismatch across utterances");
    total += f.num_frames;
  }
  if (total == 0) throw ValidationError("compute_norm_stats: empty dataset");

  // Pooled mean, then pooled squared deviations about it.
  NormStats s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (const auto& f : dataset) {
    for (std::size_t t = 0; t < f.num_frames; ++t) {
      for (std::size_t j = 0; j < dim; ++j) s.mean[j] += f.at(t, j);
    }
  }
  for (double& m : s.mean) m /= static_cast<double>(total);
  for (const auto& f : dataset) {
    for (std::size_t t = 0; t < f.num_frames; ++t) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double dev = f.at(t, j) - s.mean[j];
        s.std[j] += dev * dev;
      }
    }
  }
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(total)), kMinStd);
  return s;
}

FrameMatrix normalize(const FrameMatrix& f, const NormStats& s) {
  if (s.mean.size() != f.dim || s.std.size() != f.dim) {
    throw ValidationError("normalize: feature dim " + std::to_string(f.dim) + " does not match stats dim " +
                          std::to_string(s.mean.size()));
  }
  FrameMatrix out(f.num_frames, f.dim);
  for (std::size_t t = 0; t < f.num_frames; ++t) {
    for (std::size_t j = 0; j < f.dim; ++j) {
      out.at(t, j) = static_cast<float>((f.at(t, j) - s.mean[j]) / s.std[j]);
    }
  }
  return out;
}

void write_norm_stats(const std::filesystem::path& path, const NormStats& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "mean";
  for (double v : s.mean) out << ' ' << v;
  out << "\nstd";
  for (double v : s.std) out << ' ' << v;
  out << '\n';
}

NormStats read_norm_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  NormStats s;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto& dst = key == "mean" ? s.mean : key == "std" ? s.std : throw DataError(path.string() + ": unknown row " + key);
    double v;
    while (ls >> v) dst.push_back(v);
  }
  if (s.mean.empty() || s.mean.size() != s.std.size()) throw DataError(path.string() + ": malformed stats file");
  return s;
}

void write_features(const std::filesystem::path& path, const FrameMatrix& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("LMF1", 4);
  put_u32(out, static_cast<std::uint32_t>(f.num_frames));
  put_u32(out, static_cast<std::uint32_t>(f.dim));
  for (float v : f.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw DataError("write failed: " + path.string());
}

FrameMatrix read_features(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 12) throw DataError(path.string() + ": truncated header");
  if (std::memcmp(bytes.data(), "LMF1", 4) != 0) throw DataError(path.string() + ": bad magic");
  FrameMatrix f(get_u32(bytes.data() + 4), get_u32(bytes.data() + 8));
  if (bytes.size() != 12 + 4 * f.data.size()) throw DataError(path.string() + ": truncated payload");
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = std::bit_cast<float>(get_u32(bytes.data() + 12 + 4 * i));
  return f;
}

std::vector<Segment> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Segment> segs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Segment s;
    if (!(ls >> s.start >> s.end >> s.label) || s.end <= s.start) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed segment");
    }
    if (!segs.empty() && s.start != segs.back().end) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": segments must be sorted and contiguous");
    }
    segs.push_back(std::move(s));
  }
  return segs;
}

void write_labels(const std::filesystem::path& path, const std::vector<Segment>& segs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : segs) out << s.start << ' ' << s.end << ' ' << s.label << '\n';
}

std::vector<std::string> frame_labels(const std::vector<Segment>& segs) {
  std::vector<std::string> out;
  for (const auto& s : segs) out.insert(out.end(), s.end - s.start, s.label);
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      cols.push_back(line.substr(start, tab - start));
    }
    cols.push_back(line.substr(start));
    if (cols.size() < 2 || cols.size() > 3) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 2 or 3 tab-separated columns");
    }
    ManifestEntry e{cols[0], resolve(cols[1]), std::nullopt};
    if (cols.size() == 3) e.label_path = resolve(cols[2]);
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    if (!base.empty()) {
      auto r = p.lexically_relative(base);
      if (!r.empty() && r.native().rfind("..", 0) != 0) return r.string();
    }
    return p.string();
  };
  for (const auto& e : entries) {
    out << e.utterance_id << '\t' << rel(e.feature_path);
    if (e.label_path) out << '\t' << rel(*e.label_path);
    out << '\n';
  }
}

}  // namespace nhmm
