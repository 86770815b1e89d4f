#pragma once

// Synthetic multi-speaker dialogues generated directly in feature space.
//
// Each speaker owns a random unit "voice" vector per layer. Deeper layers blend
// that vector with a dialogue-wide drift vector, so speaker identity becomes
// less separable with depth. A speech frame is the sum of the active speakers'
// voices plus Gaussian noise; a silent frame is noise only. All boundaries sit
// on the frame grid, so the annotation is exact at the frame level.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scdnet/annotations.hpp"
#include "scdnet/errors.hpp"
#include "scdnet/labeling.hpp"
#include "scdnet/model.hpp"
#include "scdnet/rng.hpp"

namespace scdnet {

struct SimConfig {
  std::int64_t num_speakers = 4;
  std::int64_t feature_dim = 32;
  std::int64_t num_layers = 4;
  double frame_rate = 50.0;
  std::int64_t num_turns = 6;
  double segment_min = 1.0, segment_max = 5.0;
  double pause_prob = 0.3;
  double pause_min = 0.2, pause_max = 1.0;
  double overlap_prob = 0.1;
  double overlap_min = 0.1, overlap_max = 0.5;
  double noise_sigma = 0.2;
  // Weight of the shared drift vector in the deepest layer; layer l uses drift * l / (L - 1).
  double drift = 0.5;
  // When >= 0, only this layer carries speaker voices; the others are pure noise.
  std::int64_t informative_layer = -1;
  std::uint64_t seed = 7;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (num_speakers < 1) throw ConfigError("simulate.num_speakers must be >= 1");
    if (feature_dim < 1 || num_layers < 1) throw ConfigError("simulate dimensions must be >= 1");
    if (!(frame_rate > 0.0)) throw ConfigError("simulate.frame_rate must be positive");
    if (num_turns < 0) throw ConfigError("simulate.num_turns must be >= 0");
    if (!(segment_min > 0.0 && segment_max >= segment_min)) {
      throw ConfigError("simulate segment range must be positive and ordered");
    }
    if (!(pause_min > 0.0 && pause_max >= pause_min) || !(overlap_min > 0.0 && overlap_max >= overlap_min)) {
      throw ConfigError("simulate pause/overlap ranges must be positive and ordered");
    }
    if (!prob(pause_prob) || !prob(overlap_prob) || !prob(drift)) {
      throw ConfigError("simulate probabilities and drift must lie in [0, 1]");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("simulate.noise_sigma must be >= 0");
    if (informative_layer >= num_layers) throw ConfigError("simulate.informative_layer out of range");
  }
};

struct Dialogue {
  std::string id;
  LayerStack stack;
  Annotation annotation;
  FrameGrid grid;
  // Instants where a turn starts or ends, as laid out by the generator.
  std::vector<double> construction_points;
};

namespace detail {

struct FrameTurn {
  std::int64_t speaker;
  std::int64_t start, end;  // frames, half-open
};

inline std::int64_t to_frames(double seconds, double rate) {
  return std::max<std::int64_t>(1, std::llround(seconds * rate));
}

inline Eigen::RowVectorXd random_unit(std::int64_t dim, Rng& rng) {
  Eigen::RowVectorXd v(dim);
  double n = 0.0;
  do {
    for (std::int64_t d = 0; d < dim; ++d) v(d) = standard_normal(rng);
    n = v.norm();
  } while (!(n > 1e-12));
  return v / n;
}

}  // namespace detail

inline Dialogue simulate(const SimConfig& cfg, std::string id = "dialogue") {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto K = cfg.num_speakers;
  const auto L = cfg.num_layers;
  const auto D = cfg.feature_dim;

  // voices[l][k]
  std::vector<std::vector<Eigen::RowVectorXd>> voices(static_cast<std::size_t>(L));
  for (std::int64_t l = 0; l < L; ++l) {
    const Eigen::RowVectorXd drift = detail::random_unit(D, rng);
    const double beta = L > 1 ? cfg.drift * static_cast<double>(l) / static_cast<double>(L - 1) : 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      Eigen::RowVectorXd v = detail::random_unit(D, rng);
      if (cfg.informative_layer >= 0) {
        if (l != cfg.informative_layer) v.setZero();
      } else {
        v = (1.0 - beta) * v + beta * drift;
        v /= v.norm();
      }
      voices[static_cast<std::size_t>(l)].push_back(v);
    }
  }

  std::vector<detail::FrameTurn> turns;
  std::int64_t cursor = 0;
  for (std::int64_t n = 0; n < cfg.num_turns; ++n) {
    std::int64_t speaker = 0;
    if (K > 1) {
      speaker = uniform_int(rng, 0, K - 2);
      if (!turns.empty() && speaker >= turns.back().speaker) ++speaker;
    }
    const std::int64_t dur =
        detail::to_frames(uniform_real(rng, cfg.segment_min, cfg.segment_max), cfg.frame_rate);
    std::int64_t start = cursor;
    if (!turns.empty()) {
      const auto& prev = turns.back();
      if (bernoulli(rng, cfg.pause_prob)) {
        start = cursor + detail::to_frames(uniform_real(rng, cfg.pause_min, cfg.pause_max), cfg.frame_rate);
      } else if (bernoulli(rng, cfg.overlap_prob) && speaker != prev.speaker) {
        std::int64_t ov =
            detail::to_frames(uniform_real(rng, cfg.overlap_min, cfg.overlap_max), cfg.frame_rate);
        ov = std::min({ov, prev.end - prev.start - 1, dur - 1});
        start = cursor - std::max<std::int64_t>(0, ov);
      }
    }
    if (!turns.empty() && turns.back().speaker == speaker && start == turns.back().end) {
      turns.back().end = start + dur;  // single speaker continuing without a pause
    } else {
      turns.push_back({speaker, start, start + dur});
    }
    cursor = start + dur;
  }
  if (cursor < 1) throw ConfigError("simulation produced zero frames (num_turns = 0?)");

  Dialogue dlg;
  dlg.id = std::move(id);
  dlg.grid = FrameGrid(cfg.frame_rate, cursor);
  std::vector<Turn> entries;
  for (const auto& t : turns) {
    const double s = static_cast<double>(t.start) / cfg.frame_rate;
    const double e = static_cast<double>(t.end) / cfg.frame_rate;
    entries.push_back({{s, e}, "spk" + std::to_string(t.speaker)});
    dlg.construction_points.push_back(s);
    dlg.construction_points.push_back(e);
  }
  std::sort(dlg.construction_points.begin(), dlg.construction_points.end());
  dlg.construction_points.erase(
      std::unique(dlg.construction_points.begin(), dlg.construction_points.end()),
      dlg.construction_points.end());
  dlg.annotation = Annotation(std::move(entries), TimeSpan{0.0, dlg.grid.end_time()}, dlg.id);

  dlg.stack.frame_rate = cfg.frame_rate;
  dlg.stack.source = dlg.id;
  for (std::int64_t l = 0; l < L; ++l) {
    Matrix<double> x(cursor, D);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = cfg.noise_sigma * standard_normal(rng);
    for (const auto& t : turns) {
      const auto& v = voices[static_cast<std::size_t>(l)][static_cast<std::size_t>(t.speaker)];
      x.middleRows(t.start, t.end - t.start).rowwise() += v;
    }
    dlg.stack.layers.push_back(x.cast<float>());
  }
  return dlg;
}

// Per-dialogue seeds are derived from the master seed, so any subset can be
// regenerated independently.
inline std::vector<Dialogue> simulate_corpus(SimConfig cfg, std::size_t count, std::uint64_t master_seed,
                                             const std::string& prefix = "dialogue") {
  std::vector<Dialogue> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    cfg.seed = derive_seed(master_seed, {i});
    char name[32];
    std::snprintf(name, sizeof name, "%s_%03zu", prefix.c_str(), i);
    out.push_back(simulate(cfg, name));
  }
  return out;
}

}  // namespace scdnet
