// nhmm: feature extraction, synthetic data, pretraining, decoding, evaluation
// and self-verification for neural HMM speech representation models.
//
// Exit codes: 0 success, 1 validation error, 2 runtime/data error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "nhmm/config.hpp"
#include "nhmm/features.hpp"
#include "nhmm/probing.hpp"
#include "nhmm/selfcheck.hpp"
#include "nhmm/training.hpp"

namespace fs = std::filesystem;
using namespace nhmm;

namespace {

struct Report {
  std::vector<std::pair<std::string, double>> rows;

  void add(std::string name, double v) { rows.emplace_back(std::move(name), v); }

  void print(std::ostream& out) const {
    std::size_t w = 6;
    for (const auto& [k, v] : rows) w = std::max(w, k.size());
    out << std::left << std::setw(static_cast<int>(w)) << "metric" << "  value\n";
    for (const auto& [k, v] : rows) {
      out << std::left << std::setw(static_cast<int>(w)) << k << "  " << std::setprecision(6) << v << '\n';
    }
  }

  void write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "metric,value\n";
    out.precision(17);
    for (const auto& [k, v] : rows) out << k << ',' << v << '\n';
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  apply_overrides(cfg, overrides);
  return cfg;
}

// ---- extract -----------------------------------------------------------------

struct ExtractArgs {
  std::string wav_dir, out_dir, stats_out, stats_in;
};

int cmd_extract(const ExtractArgs& a) {
  if (!fs::is_directory(a.wav_dir)) throw ValidationError("--wav-dir: not a directory: " + a.wav_dir);
  std::vector<fs::path> wavs;
  for (const auto& e : fs::directory_iterator(a.wav_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  }
  std::sort(wavs.begin(), wavs.end());
  if (wavs.empty()) throw ValidationError("no input files in " + a.wav_dir);

  const MelConfig mel;
  std::vector<std::pair<fs::path, FrameMatrix>> feats;
  int failures = 0;
  for (const auto& w : wavs) {
    try {
      feats.emplace_back(w, log_mel(read_wav(w), mel));
    } catch (const std::exception& e) {
      std::cerr << "error: " << w.string() << ": " << e.what() << '\n';
      ++failures;
    }
  }
  if (feats.empty()) throw DataError("no file could be processed");

  NormStats stats;
  if (!a.stats_in.empty()) {
    stats = read_norm_stats(a.stats_in);
  } else {
    std::vector<FrameMatrix> raw;
    for (const auto& f : feats) raw.push_back(f.second);
    stats = compute_norm_stats(raw);
  }
  fs::create_directories(a.out_dir);
  if (!a.stats_out.empty()) write_norm_stats(a.stats_out, stats);

  std::vector<ManifestEntry> manifest;
  for (const auto& [wav, f] : feats) {
    const std::string id = wav.stem().string();
    const fs::path out = fs::path(a.out_dir) / (id + ".lmf");
    write_features(out, normalize(f, stats));
    ManifestEntry entry{id, fs::absolute(out), std::nullopt};
    if (auto lab = fs::path(wav).replace_extension(".lab"); fs::exists(lab)) entry.label_path = fs::absolute(lab);
    manifest.push_back(std::move(entry));
    std::cout << id << " T=" << f.num_frames << '\n';
  }
  const fs::path manifest_path = fs::path(a.out_dir) / "manifest.tsv";
  write_manifest(manifest_path, manifest);
  std::cout << "wrote " << manifest.size() << " utterances to " << manifest_path.string() << '\n';
  return failures ? 2 : 0;
}

// ---- synth ---------------------------------------------------------------------

SynthSpec load_synth_spec(const fs::path& path, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synth spec " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  SynthSpec spec;
  double min_distance = 6.0;
  std::string means;
  for (const auto& kv : parse_key_values(buf.str(), path.string())) {
    const std::string where = path.string() + ":" + std::to_string(kv.line) + ": " + kv.key;
    try {
      if (kv.key == "num_states") spec.num_states = std::stoi(kv.value);
      else if (kv.key == "dim") spec.dim = std::stoi(kv.value);
      else if (kv.key == "stay_prob") spec.stay_prob = std::stod(kv.value);
      else if (kv.key == "length") spec.length = std::stoi(kv.value);
      else if (kv.key == "count") spec.count = std::stoi(kv.value);
      else if (kv.key == "min_mean_distance") min_distance = std::stod(kv.value);
      else if (kv.key == "means") means = kv.value;
      else throw ValidationError(where + ": unknown key");
    } catch (const std::logic_error&) {
      throw ValidationError(where + ": bad value '" + kv.value + "'");
    }
  }
  if (means.empty()) {
    spec.means = random_means(spec.num_states, spec.dim, min_distance, rng);
  } else {
    // Rows separated by ';', entries by ','.
    std::stringstream rows(means);
    std::string row;
    while (std::getline(rows, row, ';')) {
      std::vector<double> r;
      std::stringstream cells(row);
      std::string cell;
      while (std::getline(cells, cell, ',')) r.push_back(std::stod(cell));
      spec.means.push_back(std::move(r));
    }
  }
  spec.validate();
  return spec;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed) {
  Rng rng(seed);
  const SynthSpec spec = load_synth_spec(spec_path, rng);
  const auto utts = synth_generate(spec, rng);
  const fs::path manifest = write_synth_dataset(utts, out_dir);
  std::ostringstream means;
  means.precision(17);
  for (std::size_t i = 0; i < spec.means.size(); ++i) {
    for (std::size_t j = 0; j < spec.means[i].size(); ++j) means << (j ? "," : "") << spec.means[i][j];
    if (i + 1 < spec.means.size()) means << ';';
  }
  write_text(fs::path(out_dir) / "synth_spec.txt",
             "num_states = " + std::to_string(spec.num_states) + "\ndim = " + std::to_string(spec.dim) +
                 "\nstay_prob = " + std::to_string(spec.stay_prob) + "\nlength = " + std::to_string(spec.length) +
                 "\ncount = " + std::to_string(spec.count) + "\nmeans = " + means.str() + "\n");
  std::cout << "wrote " << utts.size() << " utterances to " << manifest.string() << '\n';
  return 0;
}

// ---- pretrain ------------------------------------------------------------------

struct PretrainArgs {
  std::string config, manifest, out, resume;
  std::vector<std::string> overrides;
  bool force = false;
};

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig cfg = resolve_config(a.config, a.overrides);
  const auto entries = read_manifest(a.manifest);
  if (entries.empty()) throw ValidationError("manifest is empty: " + a.manifest);
  const auto data = load_utterances(entries);
  if (!cfg.feature_dim_set) cfg.model.feature_dim = static_cast<int>(data.front().frames.cols());
  cfg.validate();

  Checkpoint start;
  if (!a.resume.empty()) {
    start = load_checkpoint(a.resume);
    start.train.epochs = cfg.train.epochs;
  } else {
    start = initial_checkpoint(cfg.model, cfg.train, data);
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", cfg.to_text());
  std::cout << "variant " << to_string(start.model.variant) << " hop " << start.model.hop << " num_states "
            << start.model.num_states << '\n';
  std::cout << "parameters " << parameter_count(start.params) << '\n';

  TrainOptions opts;
  opts.out_dir = a.out;
  opts.force = a.force;
  opts.warn_stream = &std::cerr;
  const TrainResult r = train(data, std::move(start), opts);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::cout << "epoch " << r.checkpoint.epoch - static_cast<int>(r.epoch_loss.size()) + static_cast<int>(e) + 1
              << " mean_loss " << std::setprecision(10) << r.epoch_loss[e] << '\n';
  }
  std::cout << "final mean loss " << std::setprecision(10) << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << '\n';
  return 0;
}

// ---- decode --------------------------------------------------------------------

int cmd_decode(const std::string& checkpoint, const std::string& manifest, const std::string& out) {
  const Checkpoint c = load_checkpoint(checkpoint);
  std::vector<std::pair<std::string, CodeSequence>> codes;
  for (const auto& u : load_utterances(read_manifest(manifest))) {
    if (static_cast<std::size_t>(u.frames.rows()) < min_frames(c.model)) {
      std::cerr << "warning: skipping " << u.id << " (too short)\n";
      continue;
    }
    codes.emplace_back(u.id, decode_codes(c.params, u.frames, c.model));
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_codes(out, codes);
  std::cout << "decoded " << codes.size() << " utterances to " << out << '\n';
  return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string codes, manifest, metric, checkpoint, eval_manifest, csv, config;
  std::vector<std::string> overrides;
  int time_shift = -1;
};

std::vector<int> frame_ids(const ManifestEntry& e, LabelVocab& vocab) {
  if (!e.label_path) throw DataError("manifest entry " + e.utterance_id + " has no label file");
  std::vector<int> ids;
  for (const auto& l : frame_labels(read_labels(*e.label_path))) ids.push_back(vocab.id(l));
  return ids;
}

Report eval_codes(const EvalArgs& a, const RunConfig& cfg) {
  const auto entries = read_manifest(a.manifest);
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : entries) by_id[e.utterance_id] = &e;
  LabelVocab vocab;
  std::vector<int> all_codes, all_labels;
  std::vector<SegScore> seg;
  for (const auto& [id, codes] : read_codes(a.codes)) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("utterance " + id + " is not in the manifest");
    const std::vector<int> ref = frame_ids(*it->second, vocab);
    if (ref.size() < codes.size()) throw ValidationError(id + ": more codes than labelled frames");
    const std::size_t shift = ref.size() - codes.size();
    if (a.time_shift >= 0 && shift != static_cast<std::size_t>(a.time_shift)) {
      throw ValidationError(id + ": " + std::to_string(codes.size()) + " codes do not cover frames " +
                            std::to_string(a.time_shift) + ".." + std::to_string(ref.size() - 1));
    }
    const std::vector<int> tail(ref.begin() + static_cast<std::ptrdiff_t>(shift), ref.end());
    all_codes.insert(all_codes.end(), codes.begin(), codes.end());
    all_labels.insert(all_labels.end(), tail.begin(), tail.end());
    seg.push_back(seg_prf(boundaries_from_codes(codes), boundaries_from_codes(tail), cfg.tolerance_ms, cfg.frame_shift_ms));
  }
  if (all_codes.empty()) throw DataError("no codes to evaluate");
  Report rep;
  if (a.metric == "nmi") {
    rep.add("nmi", nmi(all_codes, all_labels, cfg.nmi_norm));
    rep.add("frames", static_cast<double>(all_codes.size()));
  } else {
    const SegScore s = seg_total(seg);
    rep.add("precision", s.precision);
    rep.add("recall", s.recall);
    rep.add("f1", s.f1);
    rep.add("hits", static_cast<double>(s.hits));
    rep.add("hyp_boundaries", static_cast<double>(s.hyp_total));
    rep.add("ref_boundaries", static_cast<double>(s.ref_total));
  }
  return rep;
}

Report eval_probe(const EvalArgs& a, const RunConfig& cfg) {
  if (a.checkpoint.empty()) throw ValidationError("--metric probe needs --checkpoint");
  const Checkpoint c = load_checkpoint(a.checkpoint);
  ModelConfig mcfg = c.model;
  // tap_layer from the run config overrides the checkpoint's when given.
  if (cfg.model.tap_layer != 0) mcfg.tap_layer = cfg.model.tap_layer;
  mcfg.validate();

  auto entries = read_manifest(a.manifest);
  std::vector<ManifestEntry> held_out;
  if (!a.eval_manifest.empty()) {
    held_out = read_manifest(a.eval_manifest);
  } else {
    // Last 10% of utterances (at least one) are held out.
    const std::size_t n_eval = std::max<std::size_t>(1, entries.size() / 10);
    if (entries.size() < 2) throw ValidationError("need at least two utterances or --eval-manifest");
    held_out.assign(entries.end() - static_cast<std::ptrdiff_t>(n_eval), entries.end());
    entries.resize(entries.size() - n_eval);
  }
  LabelVocab vocab;
  auto collect = [&](const std::vector<ManifestEntry>& set, RowMatrix& reps, std::vector<int>& labels) {
    std::vector<RowMatrix> parts;
    Eigen::Index rows = 0;
    for (const auto& e : set) {
      const RowMatrix frames = read_features(e.feature_path).to_double();
      const std::vector<int> y = frame_ids(e, vocab);
      if (y.size() != static_cast<std::size_t>(frames.rows())) {
        throw ValidationError(e.utterance_id + ": " + std::to_string(y.size()) + " labelled frames vs " +
                              std::to_string(frames.rows()) + " feature frames");
      }
      parts.push_back(tap_representations(c.params, mcfg, frames));
      labels.insert(labels.end(), y.begin(), y.end());
      rows += frames.rows();
    }
    reps.resize(rows, mcfg.encoder.hidden);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      reps.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
  };
  RowMatrix train_reps, eval_reps;
  std::vector<int> train_y, eval_y;
  collect(entries, train_reps, train_y);
  collect(held_out, eval_reps, eval_y);
  const LinearProbe probe = probe_train(train_reps, train_y, vocab.size(), cfg.probe);

  std::vector<int> counts(static_cast<std::size_t>(vocab.size()), 0);
  for (int y : train_y) ++counts[static_cast<std::size_t>(y)];
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const double majority_err =
      static_cast<double>(std::count_if(eval_y.begin(), eval_y.end(), [&](int y) { return y != majority; })) /
      static_cast<double>(eval_y.size());

  Report rep;
  rep.add("frame_error_rate", probe_eval(probe, eval_reps, eval_y));
  rep.add("majority_baseline_error", majority_err);
  rep.add("train_frames", static_cast<double>(train_y.size()));
  rep.add("eval_frames", static_cast<double>(eval_y.size()));
  rep.add("classes", vocab.size());
  return rep;
}

int cmd_eval(const EvalArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.overrides);
  Report rep;
  if (a.metric == "probe") {
    rep = eval_probe(a, cfg);
  } else {
    if (a.codes.empty()) throw ValidationError("--metric " + a.metric + " needs --codes");
    rep = eval_codes(a, cfg);
  }
  rep.print(std::cout);
  if (!a.csv.empty()) rep.write_csv(a.csv);
  return 0;
}

// ---- selfcheck -----------------------------------------------------------------

int cmd_selfcheck(std::uint64_t seed, const std::string& inject) {
  SelfcheckOptions opts;
  opts.seed = seed;
  if (inject == "xi-sign") {
    opts.flip_xi_sign = true;
  } else if (!inject.empty()) {
    throw ValidationError("--inject-fault: only 'xi-sign' is known");
  }
  bool ok = true;
  for (const auto& r : run_selfcheck(opts)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << " max_err "
              << std::scientific << std::setprecision(3) << r.max_error << " tol " << r.tolerance << std::defaultfloat
              << "  (" << r.detail << ")\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural HMM speech representation toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "WAV directory -> normalized 40-dim log Mel LMF1 files + manifest");
  extract->add_option("--wav-dir", ex.wav_dir)->required();
  extract->add_option("--out-dir", ex.out_dir)->required();
  auto* stats_out = extract->add_option("--stats-out", ex.stats_out, "write mean/std computed on this set");
  auto* stats_in = extract->add_option("--stats-in", ex.stats_in, "normalize with previously computed stats");
  stats_out->excludes(stats_in);

  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic HMM dataset with ground-truth labels");
  synth->add_option("--spec", synth_spec)->required();
  synth->add_option("--out-dir", synth_out)->required();
  synth->add_option("--seed", synth_seed);

  PretrainArgs pt;
  std::string pt_variant, pt_hop, pt_states, pt_epochs, pt_seed;
  auto* pretrain = app.add_subcommand("pretrain", "train a neural_hmm or vq_apc model");
  pretrain->add_option("--config", pt.config);
  pretrain->add_option("--manifest", pt.manifest)->required();
  pretrain->add_option("--out", pt.out)->required();
  pretrain->add_option("--variant", pt_variant);
  pretrain->add_option("--hop", pt_hop);
  pretrain->add_option("--num-states", pt_states);
  pretrain->add_option("--epochs", pt_epochs);
  pretrain->add_option("--seed", pt_seed);
  pretrain->add_option("--set", pt.overrides, "key=value config override (repeatable)");
  pretrain->add_option("--resume", pt.resume, "continue from a checkpoint");
  pretrain->add_flag("--force", pt.force, "overwrite existing checkpoints");

  std::string dc_ckpt, dc_manifest, dc_out;
  auto* decode = app.add_subcommand("decode", "Viterbi codes per utterance");
  decode->add_option("--checkpoint", dc_ckpt)->required();
  decode->add_option("--manifest", dc_manifest)->required();
  decode->add_option("--out", dc_out)->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "NMI, boundary P/R/F1, or linear phone probe");
  eval->add_option("--codes", ev.codes);
  eval->add_option("--manifest", ev.manifest)->required();
  eval->add_option("--metric", ev.metric)->required()->check(CLI::IsMember({"nmi", "seg", "probe"}));
  eval->add_option("--checkpoint", ev.checkpoint, "model for --metric probe");
  eval->add_option("--eval-manifest", ev.eval_manifest, "held-out set for --metric probe");
  eval->add_option("--time-shift", ev.time_shift, "expected number of unmodeled leading frames");
  eval->add_option("--csv", ev.csv);
  eval->add_option("--config", ev.config);
  eval->add_option("--set", ev.overrides);

  std::uint64_t sc_seed = 1;
  std::string sc_inject;
  auto* selfcheck = app.add_subcommand("selfcheck", "enumeration and finite-difference oracle suites");
  selfcheck->add_option("--seed", sc_seed);
  selfcheck->add_option("--inject-fault", sc_inject)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::cout << kVersion << '\n';
  try {
    if (*extract) return cmd_extract(ex);
    if (*synth) return cmd_synth(synth_spec, synth_out, synth_seed);
    if (*pretrain) {
      if (!pt_variant.empty()) pt.overrides.push_back("variant=" + pt_variant);
      if (!pt_hop.empty()) pt.overrides.push_back("hop=" + pt_hop);
      if (!pt_states.empty()) pt.overrides.push_back("num_states=" + pt_states);
      if (!pt_epochs.empty()) pt.overrides.push_back("epochs=" + pt_epochs);
      if (!pt_seed.empty()) pt.overrides.push_back("seed=" + pt_seed);
      return cmd_pretrain(pt);
    }
    if (*decode) return cmd_decode(dc_ckpt, dc_manifest, dc_out);
    if (*eval) return cmd_eval(ev);
    if (*selfcheck) return cmd_selfcheck(sc_seed, sc_inject);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
