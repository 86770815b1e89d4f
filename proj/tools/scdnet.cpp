// scdnet: simulate, label, train, infer, eval, inspect-weights.
//
// Exit codes: 0 success, 2 configuration or usage error, 1 runtime error.
// Diagnostics go to stderr; data (CSV, JSON, tables) goes to stdout.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scdnet/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "run configuration (JSON)");
  app->add_option("--seed", c.seed, "master seed; overrides simulate.seed and train.seed");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
}

scdnet::RunConfig load(const Common& c) {
  scdnet::RunConfig cfg = c.config.empty() ? scdnet::RunConfig{} : scdnet::load_run_config(c.config);
  if (c.seed) {
    cfg.simulate.seed = *c.seed;
    cfg.train_seed = *c.seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCDNet speaker change detection"};
  app.require_subcommand(1);

  Common sim_c, lab_c, train_c, infer_c, eval_c, insp_c, def_c;

  auto* sim = app.add_subcommand("simulate", "write synthetic dialogues and a manifest");
  add_common(sim, sim_c);
  std::size_t count = 60;
  sim->add_option("--count", count, "number of dialogues")->capture_default_str();

  auto* lab = app.add_subcommand("label", "fuzzy labels (and optionally triplets) for one RTTM");
  add_common(lab, lab_c);
  scdnet::LabelOptions lopt;
  lab->add_option("--rttm", lopt.rttm, "reference RTTM")->required();
  lab->add_option("--features", lopt.features, "feature file defining the frame grid");
  lab->add_option("--extent", lopt.extent, "recording end in seconds (default: last turn end)");
  lab->add_option("--frame-rate", lopt.frame_rate, "frames per second without --features")->capture_default_str();
  lab->add_flag("--triplets", lopt.triplets, "also write sampled triplets");

  auto* train = app.add_subcommand("train", "train a model; writes model.scdn and train_log.jsonl");
  add_common(train, train_c);
  std::string train_manifest;
  train->add_option("--manifest", train_manifest, "training manifest")->required();
  std::optional<double> alpha;
  std::optional<std::int64_t> epochs;
  train->add_option("--alpha", alpha, "contrastive weight (0 disables the contrastive term)");
  train->add_option("--epochs", epochs, "number of epochs");

  auto* infer = app.add_subcommand("infer", "detect change points; writes hypothesis.csv");
  add_common(infer, infer_c);
  std::string infer_ckpt, infer_manifest;
  std::vector<std::string> infer_features;
  std::optional<double> threshold, min_gap;
  infer->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
  auto* im = infer->add_option("--manifest", infer_manifest, "manifest of feature files");
  infer->add_option("--features", infer_features, "feature files")->excludes(im);
  infer->add_option("--threshold", threshold, "detection threshold");
  infer->add_option("--min-gap", min_gap, "minimum gap between change points (s)");

  auto* eval = app.add_subcommand("eval", "score hypotheses against references; writes report.json");
  add_common(eval, eval_c);
  std::string eval_hyp, eval_manifest;
  eval->add_option("--hypothesis", eval_hyp, "hypothesis CSV (file_id,time_seconds)")->required();
  eval->add_option("--manifest", eval_manifest, "reference manifest")->required();

  auto* insp = app.add_subcommand("inspect-weights", "per-layer fusion weights of a checkpoint");
  add_common(insp, insp_c);
  std::string insp_ckpt;
  bool insp_json = false;
  insp->add_option("--checkpoint", insp_ckpt, "model checkpoint")->required();
  insp->add_flag("--json", insp_json, "print JSON instead of a table");

  auto* defs = app.add_subcommand("defaults", "print the effective configuration as JSON");
  add_common(defs, def_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      const auto cfg = load(sim_c);
      const auto entries = scdnet::cmd_simulate(cfg, sim_c.out, count, cfg.simulate.seed);
      std::cerr << "wrote " << entries.size() << " dialogues to " << sim_c.out << "\n";
    } else if (*lab) {
      const auto cfg = load(lab_c);
      const auto out = scdnet::cmd_label(cfg, lopt, lab_c.out, cfg.train_seed);
      std::cerr << "labelled " << out.labels.size() << " frames";
      if (lopt.triplets) std::cerr << ", " << out.triplets.size() << " triplets";
      std::cerr << "\n";
    } else if (*train) {
      auto cfg = load(train_c);
      if (alpha) cfg.loss.alpha = *alpha;
      if (epochs) cfg.train.epochs = *epochs;
      cfg.validate();
      const auto res = scdnet::cmd_train(cfg, train_manifest, train_c.out, &std::cout);
      std::cerr << "best epoch " << res.best_epoch << ", validation F1 " << res.best_f1 << "\n";
    } else if (*infer) {
      auto cfg = load(infer_c);
      if (threshold) cfg.detect.threshold = *threshold;
      if (min_gap) cfg.detect.min_gap = *min_gap;
      if (infer_manifest.empty() && infer_features.empty()) {
        throw scdnet::ConfigError("infer needs --manifest or --features");
      }
      const auto points = infer_manifest.empty()
                              ? scdnet::cmd_infer(infer_ckpt, infer_features, cfg.detect)
                              : scdnet::cmd_infer_manifest(infer_ckpt, infer_manifest, cfg.detect);
      scdnet::ensure_directory(infer_c.out);
      std::ofstream f(scdnet::fs::path(infer_c.out) / "hypothesis.csv", std::ios::trunc);
      if (!f) throw std::runtime_error("cannot write hypothesis.csv");
      scdnet::write_points_csv(points, f);
      scdnet::write_points_csv(points, std::cout);
    } else if (*eval) {
      const auto cfg = load(eval_c);
      std::ifstream h(eval_hyp);
      if (!h) throw std::runtime_error("cannot open hypothesis '" + eval_hyp + "'");
      const auto report = scdnet::cmd_eval(scdnet::read_points_csv(h), eval_manifest, cfg.train);
      const std::string text = scdnet::to_json(report).dump(2) + "\n";
      scdnet::ensure_directory(eval_c.out);
      scdnet::write_text((scdnet::fs::path(eval_c.out) / "report.json").string(), text);
      std::cout << text;
    } else if (*insp) {
      load(insp_c);
      const auto r = scdnet::cmd_inspect_weights(insp_ckpt);
      const std::string json = scdnet::to_json(r).dump(2) + "\n";
      scdnet::ensure_directory(insp_c.out);
      scdnet::write_text((scdnet::fs::path(insp_c.out) / "weights.json").string(), json);
      if (insp_json) {
        std::cout << json;
      } else {
        if (r.fusion_bypassed) std::cout << "fusion bypassed (single-layer model)\n";
        std::cout << "layer  weight\n";
        for (std::size_t i = 0; i < r.weights.size(); ++i) {
          char line[64];
          std::snprintf(line, sizeof line, "%5zu  %.6f\n", i, r.weights[i]);
          std::cout << line;
        }
      }
    } else if (*defs) {
      std::cout << scdnet::to_json(load(def_c)).dump(2) << "\n";
    }
  } catch (const scdnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
