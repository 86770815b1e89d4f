#pragma once

// Batch commands behind the scdnet CLI. Each takes already-parsed options and
// writes its artifacts; the CLI maps exceptions to exit codes.
//
// A manifest is a text file with one "id features rttm" line per dialogue;
// relative paths are resolved against the manifest's directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "scdnet/annotations.hpp"
#include "scdnet/checkpoint.hpp"
#include "scdnet/config.hpp"
#include "scdnet/errors.hpp"
#include "scdnet/features.hpp"
#include "scdnet/inference.hpp"
#include "scdnet/labeling.hpp"
#include "scdnet/sampling.hpp"
#include "scdnet/simulator.hpp"
#include "scdnet/trainer.hpp"

namespace scdnet {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string id;
  std::string features;
  std::string rttm;
  bool operator==(const ManifestEntry&) const = default;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0].front() == '#') continue;
    if (fields.size() != 3) throw ParseError(lineno, "manifest lines are 'id features rttm'");
    auto resolve = [&](std::string_view p) {
      const fs::path q(p);
      return (q.is_absolute() ? q : base / q).string();
    };
    out.push_back({std::string(fields[0]), resolve(fields[1]), resolve(fields[2])});
  }
  return out;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& e : entries) out << e.id << ' ' << e.features << ' ' << e.rttm << '\n';
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

inline Annotation read_rttm_file(const std::string& path, std::optional<TimeSpan> extent = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open RTTM '" + path + "'");
  return parse_rttm(in, extent);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory '" + dir + "'");
}

// The annotation extent is stretched to the feature grid, which RTTM's
// millisecond rounding may undershoot or overshoot by a hair.
inline Example load_example(const ManifestEntry& e, const TrainConfig& train = {}) {
  LayerStack stack = read_features(e.features);
  const FrameGrid grid(stack.frame_rate, stack.frames());
  const Annotation raw = read_rttm_file(e.rttm);
  const double end = std::max(grid.end_time(), raw.extent().end);
  Annotation ann(raw.entries(), TimeSpan{0.0, end}, e.id);
  stack.source = e.id;
  return make_example(e.id, std::move(stack), std::move(ann), train.fuzzy_radius, train.merge_tolerance);
}

// ---------------------------------------------------------------- simulate

inline std::vector<ManifestEntry> cmd_simulate(const RunConfig& cfg, const std::string& out_dir, std::size_t count,
                                               std::uint64_t seed) {
  cfg.simulate.validate();
  ensure_directory(out_dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    SimConfig sc = cfg.simulate;
    sc.seed = derive_seed(seed, {i});
    char name[32];
    std::snprintf(name, sizeof name, "dialogue_%03zu", i);
    const Dialogue d = simulate(sc, name);
    const ManifestEntry e{d.id, d.id + ".scdf", d.id + ".rttm"};
    write_features(d.stack, (fs::path(out_dir) / e.features).string());
    write_text((fs::path(out_dir) / e.rttm).string(), to_rttm(d.annotation));
    entries.push_back(e);
  }
  write_manifest(entries, (fs::path(out_dir) / "manifest.txt").string());
  return entries;
}

// ---------------------------------------------------------------- label

struct LabelOptions {
  std::string rttm;
  std::string features;            // optional; defines the frame grid
  std::optional<double> extent;    // end of the recording, when no features are given
  double frame_rate = kDefaultFrameRate;
  bool triplets = false;
};

struct LabelOutput {
  LabelSignal labels;
  std::vector<Triplet> triplets;
};

inline LabelOutput cmd_label(const RunConfig& cfg, const LabelOptions& opt, const std::string& out_dir,
                             std::uint64_t seed) {
  std::optional<TimeSpan> extent;
  FrameGrid grid;
  if (!opt.features.empty()) {
    const LayerStack stack = read_features(opt.features);
    grid = FrameGrid(stack.frame_rate, stack.frames());
    extent = TimeSpan{0.0, grid.end_time()};
  }
  if (opt.extent) {
    if (!(*opt.extent > 0.0)) throw ConfigError("--extent must be positive");
    extent = TimeSpan{0.0, *opt.extent};
  }
  const Annotation raw = read_rttm_file(opt.rttm);
  const double end = std::max(extent ? extent->end : 0.0, raw.extent().end);
  const Annotation ann(raw.entries(), TimeSpan{0.0, end}, raw.file_id());
  if (opt.features.empty()) {
    if (!(opt.frame_rate > 0.0)) throw ConfigError("--frame-rate must be positive");
    grid = FrameGrid(opt.frame_rate, frames_for(end, opt.frame_rate));
  }

  const ChangePoints cp = derive_change_points(ann, cfg.train.merge_tolerance);
  LabelOutput out;
  out.labels = fuzzy_labels(cp, grid, cfg.train.fuzzy_radius);
  ensure_directory(out_dir);
  std::ostringstream labels;
  write_labels_csv(out.labels, labels);
  write_text((fs::path(out_dir) / (ann.file_id() + ".labels.csv")).string(), labels.str());
  if (opt.triplets) {
    Rng rng(derive_seed(seed, {0x7219}));
    out.triplets = sample_triplets(segment_map(cp, grid), rng, cfg.train.min_segment_frames);
    std::ostringstream t;
    write_triplets_csv(out.triplets, t);
    write_text((fs::path(out_dir) / (ann.file_id() + ".triplets.csv")).string(), t.str());
  }
  return out;
}

// ---------------------------------------------------------------- train

inline nlohmann::json to_json(const EpochLog& l) {
  return {{"epoch", l.epoch},
          {"loss", l.loss},
          {"classification", l.classification},
          {"contrastive", l.contrastive},
          {"grad_norm", l.grad_norm},
          {"val_coverage", l.val_coverage},
          {"val_purity", l.val_purity},
          {"val_f1", l.val_f1},
          {"seconds", l.seconds}};
}

// Writes <out>/model.scdn (best validation F1) and <out>/train_log.jsonl.
inline TrainResult cmd_train(const RunConfig& cfg, const std::string& manifest, const std::string& out_dir,
                             std::ostream* progress = nullptr) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw ValidationError("manifest '" + manifest + "' lists no dialogues");
  std::vector<Example> all;
  for (const auto& e : entries) all.push_back(load_example(e, cfg.train));

  ModelConfig mc = cfg.model;
  mc.layers = static_cast<std::int64_t>(all.front().stack.num_layers());
  mc.input_dim = all.front().stack.dim();

  std::vector<Example> train_set, val_set;
  const auto [ti, vi] = split_train_validation(all.size(), cfg.train.val_fraction, cfg.train_seed);
  for (auto i : ti) train_set.push_back(all[i]);
  for (auto i : vi) val_set.push_back(all[i]);

  ensure_directory(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open '" + log_path + "' for writing");

  const Trainer trainer(mc, cfg.loss, cfg.train, cfg.detect, cfg.train_seed);
  TrainResult res = trainer.run(train_set, val_set, [&](const EpochLog& l) {
    const std::string line = to_json(l).dump();
    log << line << '\n' << std::flush;
    if (progress) *progress << line << '\n' << std::flush;
  });
  log << nlohmann::json{{"best_epoch", res.best_epoch}, {"best_val_f1", res.best_f1}}.dump() << '\n';
  write_checkpoint(res.best, (fs::path(out_dir) / "model.scdn").string());
  return res;
}

// ---------------------------------------------------------------- infer

inline HypothesisPoints cmd_infer(const std::string& checkpoint, const std::vector<std::string>& feature_paths,
                                  const DetectionConfig& detect) {
  detect.validate();
  const ModelState<float> state = read_checkpoint(checkpoint);
  HypothesisPoints out;
  for (const auto& path : feature_paths) {
    const LayerStack stack = read_features(path);
    if (static_cast<std::int64_t>(stack.num_layers()) != state.config.layers ||
        stack.dim() != state.config.input_dim) {
      throw ShapeError("'" + path + "' has " + std::to_string(stack.num_layers()) + " layers x dim " +
                       std::to_string(stack.dim()) + ", checkpoint expects " +
                       std::to_string(state.config.layers) + " layers x dim " +
                       std::to_string(state.config.input_dim));
    }
    const auto cache = run_model(state, stack);
    const FrameGrid grid(stack.frame_rate, stack.frames());
    out[fs::path(path).stem().string()] = detect_change_points(cache.prediction, grid, detect);
  }
  return out;
}

inline HypothesisPoints cmd_infer_manifest(const std::string& checkpoint, const std::string& manifest,
                                           const DetectionConfig& detect) {
  std::vector<std::string> paths;
  std::vector<std::string> ids;
  for (const auto& e : read_manifest(manifest)) {
    paths.push_back(e.features);
    ids.push_back(e.id);
  }
  HypothesisPoints by_stem = cmd_infer(checkpoint, paths, detect);
  HypothesisPoints out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    out[ids[i]] = by_stem[fs::path(paths[i]).stem().string()];
  }
  return out;
}

// ---------------------------------------------------------------- eval

// Every manifest dialogue is scored; one with no hypothesis rows is scored as
// a single uncut segment. Hypothesis ids absent from the manifest are an error.
inline MetricReport cmd_eval(const HypothesisPoints& hyp, const std::string& manifest,
                             const TrainConfig& train = {}) {
  const auto entries = read_manifest(manifest);
  std::set<std::string> known;
  for (const auto& e : entries) known.insert(e.id);
  std::vector<std::string> missing;
  for (const auto& [id, cp] : hyp) {
    if (!known.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("no reference for hypothesis file ids: " + list);
  }
  std::vector<FileScore> files;
  for (const auto& e : entries) {
    const Example ex = load_example(e, train);
    const auto it = hyp.find(e.id);
    const ChangePoints cp = it == hyp.end() ? ChangePoints{} : it->second;
    files.push_back(score_file(ex.reference, partition(cp, ex.annotation.extent()), e.id));
  }
  return aggregate(std::move(files));
}

// ---------------------------------------------------------------- inspect-weights

struct WeightReport {
  bool fusion_bypassed = false;
  std::vector<double> weights;
};

inline WeightReport cmd_inspect_weights(const std::string& checkpoint) {
  const ModelState<float> state = read_checkpoint(checkpoint);
  WeightReport r;
  r.fusion_bypassed = !state.config.has_fusion();
  r.weights = fusion_weights(state);
  return r;
}

inline nlohmann::json to_json(const WeightReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < r.weights.size(); ++i) layers.push_back({{"layer", i}, {"weight", r.weights[i]}});
  nlohmann::json out = {{"fusion_bypassed", r.fusion_bypassed}, {"layers", layers}};
  if (r.fusion_bypassed) out["note"] = "fusion bypassed";
  return out;
}

}  // namespace scdnet
