// Acceptance checks. Prints one PASS/FAIL line per criterion; `--only NAME`
// runs a single one. Exit status is nonzero when any selected check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "scdnet/checkpoint.hpp"
#include "scdnet/features.hpp"
#include "scdnet/simulator.hpp"
#include "scdnet/trainer.hpp"
#include "support/grad_cases.hpp"
#include "support/oracles.hpp"

using namespace scdnet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  std::size_t checked = 0;
  for (const auto& c : support::primitive_cases()) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const double e = support::run_problem(c.make(s), s).max_error;
      ++checked;
      if (!(e <= worst)) {
        worst = e;
        worst_case = c.name + " seed " + std::to_string(s);
      }
    }
  }
  for (std::uint64_t s = 0; s < 100; ++s) {
    const double e = support::run_problem(support::total_loss_problem(s), s).max_error;
    ++checked;
    if (!(e <= worst)) {
      worst = e;
      worst_case = "total_loss seed " + std::to_string(s);
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0,
          fmt("%zu cases, worst relative error %.2e (%s), %.1f s", checked, worst, worst_case.c_str(), secs)};
}

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::size_t duality_breaks = 0;
  for (int i = 0; i < 1000; ++i) {
    const double end = uniform_real(rng, 0.5, 120.0);
    const auto r = support::random_segmentation(rng, end, 20);
    const auto h = support::random_segmentation(rng, end, 20);
    const auto m = purity_coverage(r, h);
    const auto swapped = purity_coverage(h, r);
    worst = std::max({worst, std::abs(m.coverage - support::brute_coverage(r, h)),
                      std::abs(m.purity - support::brute_purity(r, h))});
    if (m.purity != swapped.coverage || m.coverage != swapped.purity) ++duality_breaks;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && duality_breaks == 0 && secs < 10.0,
          fmt("1000 pairs, max deviation %.1e, duality breaks %zu, %.2f s", worst, duality_breaks, secs)};
}

Outcome fuzzy_labels_contract() {
  Rng rng(99);
  std::size_t violations = 0, frames_checked = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const FrameGrid grid(50.0, uniform_int(rng, 1, 1500));
    const auto cps = support::random_change_points(rng, grid.end_time(), 12);
    const auto y = fuzzy_labels(ChangePoints{cps}, grid);
    const double half_frame = 0.5 / grid.frame_rate;
    for (std::int64_t f = 0; f < grid.num_frames; ++f, ++frames_checked) {
      const double v = y[static_cast<std::size_t>(f)];
      worst = std::max(worst, std::abs(v - support::brute_label(cps, grid.instant(f))));
      if (v > 0.0) {
        const bool near = std::any_of(cps.begin(), cps.end(),
                                      [&](double c) { return std::abs(grid.instant(f) - c) < kFuzzyRadius; });
        violations += !near;
      }
    }
    for (double c : cps) {
      const auto f = grid.snap(c);
      if (f < 0 || f >= grid.num_frames) continue;
      violations += y[static_cast<std::size_t>(f)] < 1.0 - half_frame / kFuzzyRadius - 1e-12;
    }
  }
  return {violations == 0 && worst <= 1e-12,
          fmt("1000 sets, %zu frames, contract violations %zu, max oracle deviation %.1e", frames_checked,
              violations, worst)};
}

Outcome sampler_contract() {
  Rng gen(5150);
  std::size_t violations = 0, triplets = 0;
  std::int64_t left = 0, sided = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto frames = uniform_int(gen, 1, 300);
    std::vector<std::int64_t> cuts;
    for (auto k = uniform_int(gen, 0, 8); k > 0; --k) cuts.push_back(uniform_int(gen, 0, frames));
    const SegmentMap m(frames, cuts);
    Rng rng(derive_seed(5150, {static_cast<std::uint64_t>(i)}));
    for (const Triplet& t : sample_triplets(m, rng)) {
      ++triplets;
      const auto s = m.segment_of(t.anchor);
      bool ok = t.positive != t.anchor && m.segment_of(t.positive) == s;
      if (t.random_negative()) {
        ok = ok && m.segments().size() == 1;
      } else {
        const auto n = m.segment_of(t.negative);
        ok = ok && (n + 1 == s || n == s + 1);
        if (s > 0 && s + 1 < m.segments().size()) {
          ++sided;
          left += n + 1 == s;
        }
      }
      violations += !ok;
    }
  }
  const double e = static_cast<double>(sided) / 2.0;
  const double dl = static_cast<double>(left) - e;
  const double chi2 = 2.0 * dl * dl / e;
  const double p = std::erfc(std::sqrt(chi2 / 2.0));  // 1 degree of freedom
  return {violations == 0 && p > 0.01,
          fmt("%zu triplets, violations %zu, side choice %lld/%lld left, chi2 %.3f, p %.3f", triplets, violations,
              static_cast<long long>(left), static_cast<long long>(sided), chi2, p)};
}

struct Split {
  std::vector<Example> train, val, test;
};

Split make_split(const SimConfig& sc, std::size_t n_train_pool, std::size_t n_test, std::uint64_t seed,
                 double val_fraction = 0.1) {
  const auto dialogues = simulate_corpus(sc, n_train_pool + n_test, seed);
  std::vector<Example> all;
  for (const auto& d : dialogues) all.push_back(make_example(d.id, d.stack, d.annotation));
  Split s;
  s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train_pool), all.end());
  const auto [tr, va] = split_train_validation(n_train_pool, val_fraction, seed);
  for (auto i : tr) s.train.push_back(all[i]);
  for (auto i : va) s.val.push_back(all[i]);
  return s;
}

ModelConfig model_for(const SimConfig& sc) {
  ModelConfig mc;
  mc.layers = sc.num_layers;
  mc.input_dim = sc.feature_dim;
  return mc;
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const SimConfig sc;
  const Split data = make_split(sc, 50, 10, 7);
  const ModelConfig mc = model_for(sc);
  const TrainConfig tc;
  const DetectionConfig dc;
  const auto res = Trainer(mc, LossConfig{}, tc, dc, 7).run(data.train, data.val);
  const double f1 = evaluate(res.best, data.test, dc).f1;
  const double secs = seconds_since(t0);

  const double untrained = evaluate(init_model<float>(mc, derive_seed(7, {0x1417})), data.test, dc).f1;
  double constant = 0.0;
  for (double c : {0.0, 0.5, 1.0 - 1e-6}) {
    std::vector<FileScore> files;
    for (const Example& ex : data.test) {
      const std::vector<double> p(static_cast<std::size_t>(ex.grid.num_frames), c);
      const auto hyp = segmentation_from_points(detect_change_points(p, ex.grid, dc), ex.annotation.extent());
      files.push_back(score_file(ex.reference, hyp, ex.id));
    }
    constant = std::max(constant, aggregate(files).f1);
  }

  // Silence-only inputs: digital zeros and background noise without any voice.
  std::size_t silence_points = 0;
  Rng noise(77);
  for (double sigma : {0.0, sc.noise_sigma}) {
    LayerStack quiet;
    for (std::int64_t l = 0; l < sc.num_layers; ++l) {
      Matrix<float> x(500, sc.feature_dim);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(sigma * standard_normal(noise));
      quiet.layers.push_back(x);
    }
    const auto out = run_model(res.best, quiet);
    silence_points += detect_change_points(out.prediction, FrameGrid(sc.frame_rate, 500), dc).times.size();
  }

  std::string failed;
  if (f1 < 0.80) failed += " F1<0.80";
  if (secs >= 600.0) failed += " time";
  if (f1 - constant < 0.25) failed += " constant-gap<0.25";
  if (f1 - untrained < 0.25) failed += " untrained-gap<0.25";
  return {failed.empty(),
          fmt("test F1 %.3f (best epoch %lld of %lld), constant baseline %.3f (gap %.3f), untrained %.3f (gap %.3f), "
              "silence-file change points %zu, %.0f s%s%s",
              f1, static_cast<long long>(res.best_epoch), static_cast<long long>(res.log.size()), constant,
              f1 - constant, untrained, f1 - untrained, silence_points, secs, failed.empty() ? "" : "; failed:",
              failed.c_str())};
}

Outcome ablation() {
  const auto t0 = Clock::now();
  const SimConfig sc;
  TrainConfig tc;
  tc.epochs = 10;
  std::vector<double> with, without;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Split data = make_split(sc, 24, 10, 100 + seed, 1.0 / 6.0);
    for (double alpha : {0.05, 0.0}) {
      LossConfig lc;
      lc.alpha = alpha;
      const auto res = Trainer(model_for(sc), lc, tc, DetectionConfig{}, seed).run(data.train, data.val);
      (alpha > 0 ? with : without).push_back(evaluate(res.best, data.test, DetectionConfig{}).f1);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double gap = mean(with) - mean(without);
  const double pooled = std::sqrt((var(with) + var(without)) / 2.0);
  std::string per_seed;
  for (std::size_t i = 0; i < with.size(); ++i) per_seed += fmt(" %.3f/%.3f", with[i], without[i]);
  return {gap >= -pooled, fmt("mean F1 alpha=0.05 %.3f vs alpha=0 %.3f, gap %+.3f, pooled sd %.3f, seeds%s, %.0f s",
                              mean(with), mean(without), gap, pooled, per_seed.c_str(), seconds_since(t0))};
}

Outcome fusion_localization() {
  const auto t0 = Clock::now();
  int hits = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SimConfig sc;
    sc.informative_layer = static_cast<std::int64_t>(seed % static_cast<std::uint64_t>(sc.num_layers));
    const Split data = make_split(sc, 20, 0, 200 + seed, 0.0);
    TrainConfig tc;
    tc.epochs = 6;
    const auto res = Trainer(model_for(sc), LossConfig{}, tc, DetectionConfig{}, seed).run(data.train, {});
    const auto w = fusion_weights(res.last);
    const auto top = std::max_element(w.begin(), w.end()) - w.begin();
    hits += top == sc.informative_layer;
    detail += fmt(" [layer %lld: w=%.2f, argmax %lld]", static_cast<long long>(sc.informative_layer),
                  w[static_cast<std::size_t>(sc.informative_layer)], static_cast<long long>(top));
  }
  return {hits >= 4, fmt("%d of 5 seeds localize the informative layer,%s %.0f s", hits, detail.c_str(),
                         seconds_since(t0))};
}

Outcome round_trips() {
  Rng rng(31337);
  std::size_t feature_bad = 0, checkpoint_bad = 0, rttm_bad = 0;
  for (int i = 0; i < 100; ++i) {
    LayerStack s;
    s.frame_rate = 50.0;
    const auto T = uniform_int(rng, 1, 60), D = uniform_int(rng, 1, 12);
    for (auto l = uniform_int(rng, 1, 5); l > 0; --l) s.layers.push_back(support::random_mat(rng, T, D).cast<float>());
    const auto bytes = encode_features(s);
    const auto back = decode_features(bytes);
    feature_bad += !(back == s) || encode_features(back) != bytes;

    ModelConfig mc;
    mc.layers = uniform_int(rng, 1, 4);
    mc.input_dim = uniform_int(rng, 1, 8);
    mc.hidden = 4 * uniform_int(rng, 1, 4);
    mc.blocks = uniform_int(rng, 1, 3);
    mc.heads = uniform_int(rng, 1, 2);
    const auto st = init_model<float>(mc, static_cast<std::uint64_t>(i));
    const auto ck = encode_checkpoint(st);
    const auto st2 = decode_checkpoint(ck);
    checkpoint_bad += !(st2 == st) || encode_checkpoint(st2) != ck;
  }
  for (int i = 0; i < 1000; ++i) {
    const Annotation a = support::random_annotation(rng, "rec" + std::to_string(i));
    Annotation b = parse_rttm(to_rttm(a));
    if (a.empty()) b = Annotation(b.entries(), b.extent(), a.file_id());
    rttm_bad += !approx_equal(a, b);
  }
  return {feature_bad + checkpoint_bad + rttm_bad == 0,
          fmt("features %zu/100 mismatched, checkpoints %zu/100 mismatched, RTTM %zu/1000 mismatched", feature_bad,
              checkpoint_bad, rttm_bad)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradients", gradients},
      {"metric_oracle", metric_oracle},
      {"fuzzy_labels", fuzzy_labels_contract},
      {"sampler", sampler_contract},
      {"end_to_end", end_to_end},
      {"ablation", ablation},
      {"fusion_localization", fusion_localization},
      {"round_trips", round_trips},
  };
  std::string only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") only = argv[i + 1];
  }
  int failures = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only != c.name) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
