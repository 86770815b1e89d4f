#pragma once

// Mini-batch training of SCDNet on whole utterances with
//   L = Lp(prediction, fuzzy labels) + alpha * Lc(hidden states, triplets),
// Adam updates, per-epoch validation F1, and best-F1 model selection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "scdnet/annotations.hpp"
#include "scdnet/errors.hpp"
#include "scdnet/inference.hpp"
#include "scdnet/labeling.hpp"
#include "scdnet/losses.hpp"
#include "scdnet/model.hpp"
#include "scdnet/optimizer.hpp"
#include "scdnet/rng.hpp"
#include "scdnet/sampling.hpp"

namespace scdnet {

struct TrainConfig {
  std::int64_t epochs = 25;
  double learning_rate = 2e-3;
  std::int64_t batch_size = 1;  // utterances per update
  double clip_norm = 5.0;
  double val_fraction = 0.1;
  // Shards of a batch computed concurrently; the reduction is ordered, so the
  // result does not depend on this value.
  std::int64_t workers = 1;
  std::int64_t min_segment_frames = 2;
  bool resample_per_step = true;
  double fuzzy_radius = kFuzzyRadius;
  double merge_tolerance = kDefaultMergeTolerance;

  void validate() const {
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (workers < 1) throw ConfigError("train.workers must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must be in [0, 1)");
    if (min_segment_frames < 1) throw ConfigError("train.min_segment_frames must be >= 1");
    if (!(fuzzy_radius > 0.0)) throw ConfigError("train.fuzzy_radius must be positive");
    if (!(merge_tolerance >= 0.0)) throw ConfigError("train.merge_tolerance must be >= 0");
  }
};

// An utterance with everything the objective needs precomputed.
struct Example {
  std::string id;
  LayerStack stack;
  Annotation annotation;
  FrameGrid grid;
  LabelSignal labels;
  SegmentMap segments;
  std::vector<TimeSpan> reference;
};

inline Example make_example(std::string id, LayerStack stack, Annotation annotation,
                            double fuzzy_radius = kFuzzyRadius,
                            double merge_tolerance = kDefaultMergeTolerance) {
  stack.validate();
  Example ex;
  ex.id = std::move(id);
  ex.grid = FrameGrid(stack.frame_rate, stack.frames());
  const ChangePoints cp = derive_change_points(annotation, merge_tolerance);
  ex.labels = fuzzy_labels(cp, ex.grid, fuzzy_radius);
  ex.segments = segment_map(cp, ex.grid);
  ex.reference = partition(cp, annotation.extent());
  ex.stack = std::move(stack);
  ex.annotation = std::move(annotation);
  return ex;
}

// Frame probabilities -> change points -> per-file scores, micro-averaged.
inline MetricReport evaluate(const ModelState<float>& state, std::span<const Example> examples,
                             const DetectionConfig& detect) {
  std::vector<FileScore> files;
  for (const Example& ex : examples) {
    const auto cache = run_model(state, ex.stack);
    const ChangePoints hyp = detect_change_points(cache.prediction, ex.grid, detect);
    files.push_back(score_file(ex.reference, partition(hyp, ex.annotation.extent()), ex.id));
  }
  return aggregate(std::move(files));
}

// Seeded split: returns (train indices, validation indices). At least one
// utterance is held out when n >= 2 and val_fraction > 0; with a single
// utterance the validation set reuses it.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_validation(
    std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5917}));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  }
  if (n < 2 || val_fraction <= 0.0) return {order, order};
  auto nval = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  nval = std::clamp<std::size_t>(nval, 1, n - 1);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nval));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(nval), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

struct EpochLog {
  std::int64_t epoch = 0;
  double loss = 0.0;
  double classification = 0.0;
  double contrastive = 0.0;
  double grad_norm = 0.0;
  double val_coverage = 0.0;
  double val_purity = 0.0;
  double val_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelState<float> best;
  ModelState<float> last;
  double best_f1 = -1.0;
  std::int64_t best_epoch = 0;
  std::vector<EpochLog> log;
};

struct StepGradient {
  std::vector<Matrix<float>> grads;
  double loss = 0.0;
  double classification = 0.0;
  double contrastive = 0.0;
};

// Gradient of the total objective for one utterance.
inline StepGradient utterance_gradient(const ModelState<float>& state, const Example& ex,
                                       std::span<const Triplet> triplets, const LossConfig& loss,
                                       Rng& rng) {
  Tape<float> tape;
  const auto params = bind_parameters(tape, state, true);
  const auto layers = bind_layers(tape, ex.stack);
  const ForwardVars fv = forward(tape, state.config, params, std::span<const Var>(layers));
  const Var lp = ops::classification_loss(tape, fv.prediction, ex.labels, loss);
  const Var lc = ops::contrastive_loss(tape, std::span<const Var>(fv.hidden), triplets, loss, rng);
  const Var total = ops::total_loss(tape, lp, lc, loss);
  StepGradient out;
  out.loss = tape.value(total)(0, 0);
  out.classification = tape.value(lp)(0, 0);
  out.contrastive = tape.value(lc)(0, 0);
  if (!std::isfinite(out.loss)) return out;
  tape.backward(total);
  out.grads.reserve(params.size());
  for (Var p : params) out.grads.push_back(tape.grad(p));
  return out;
}

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochLog&)>;

  Trainer(ModelConfig model, LossConfig loss, TrainConfig train, DetectionConfig detect, std::uint64_t seed)
      : model_(model), loss_(loss), train_(train), detect_(detect), seed_(seed) {
    model_.validate();
    loss_.validate();
    train_.validate();
    detect_.validate();
  }

  TrainResult run(std::span<const Example> train_set, std::span<const Example> val_set,
                  const EpochCallback& on_epoch = {}) const {
    return run(init_model<float>(model_, derive_seed(seed_, {0x1417})), train_set, val_set, on_epoch);
  }

  TrainResult run(ModelState<float> state, std::span<const Example> train_set,
                  std::span<const Example> val_set, const EpochCallback& on_epoch = {}) const {
    if (train_set.empty()) throw ValidationError("training set is empty");
    for (const Example& ex : train_set) check_shape(state, ex);
    for (const Example& ex : val_set) check_shape(state, ex);

    AdamConfig ac;
    ac.learning_rate = train_.learning_rate;
    ac.clip_norm = train_.clip_norm;
    Adam<float> adam(state.params, ac);

    // Fixed triplets when per-step resampling is off.
    std::vector<std::vector<Triplet>> fixed;
    if (!train_.resample_per_step) {
      for (std::size_t i = 0; i < train_set.size(); ++i) {
        Rng rng(derive_seed(seed_, {0x7219, i}));
        fixed.push_back(sample_triplets(train_set[i].segments, rng, train_.min_segment_frames));
      }
    }

    TrainResult result;
    result.best = state;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t epoch = 1; epoch <= train_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      Rng shuffle_rng(derive_seed(seed_, {0x5e1f, static_cast<std::uint64_t>(epoch)}));
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1],
                  order[static_cast<std::size_t>(uniform_int(shuffle_rng, 0, static_cast<std::int64_t>(i) - 1))]);
      }
      EpochLog log;
      log.epoch = epoch;
      std::size_t step = 0;
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(train_.batch_size), ++step) {
        const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(train_.batch_size));
        std::vector<StepGradient> shards(e - b);
        auto work = [&](std::size_t k) {
          const std::size_t idx = order[b + k];
          Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(epoch), idx, 0x7a}));
          std::vector<Triplet> sampled;
          std::span<const Triplet> triplets;
          if (train_.resample_per_step) {
            sampled = sample_triplets(train_set[idx].segments, rng, train_.min_segment_frames);
            triplets = sampled;
          } else {
            triplets = fixed[idx];
          }
          shards[k] = utterance_gradient(state, train_set[idx], triplets, loss_, rng);
        };
        run_sharded(shards.size(), work);

        std::vector<Matrix<float>> grads;
        for (std::size_t k = 0; k < shards.size(); ++k) {
          const StepGradient& s = shards[k];
          if (!std::isfinite(s.loss)) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + " (utterance '" + train_set[order[b + k]].id + "')");
          }
          if (grads.empty()) {
            grads = s.grads;
          } else {
            for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += s.grads[i];
          }
          log.loss += s.loss;
          log.classification += s.classification;
          log.contrastive += s.contrastive;
        }
        const float inv = 1.0f / static_cast<float>(shards.size());
        for (auto& g : grads) g *= inv;
        log.grad_norm = std::max(log.grad_norm, adam.step(state.params, grads));
      }
      const double n = static_cast<double>(train_set.size());
      log.loss /= n;
      log.classification /= n;
      log.contrastive /= n;
      if (!val_set.empty()) {
        const MetricReport rep = evaluate(state, val_set, detect_);
        log.val_coverage = rep.coverage;
        log.val_purity = rep.purity;
        log.val_f1 = rep.f1;
      }
      log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      // Without a validation set the latest epoch counts as best.
      if (val_set.empty() || log.val_f1 > result.best_f1) {
        result.best_f1 = log.val_f1;
        result.best_epoch = epoch;
        result.best = state;
      }
      result.log.push_back(log);
      if (on_epoch) on_epoch(log);
    }
    result.last = std::move(state);
    return result;
  }

 private:
  void check_shape(const ModelState<float>& state, const Example& ex) const {
    if (static_cast<std::int64_t>(ex.stack.num_layers()) != state.config.layers ||
        ex.stack.dim() != state.config.input_dim) {
      throw ShapeError("utterance '" + ex.id + "' has " + std::to_string(ex.stack.num_layers()) + " layers x dim " +
                       std::to_string(ex.stack.dim()) + ", model expects " + std::to_string(state.config.layers) +
                       " layers x dim " + std::to_string(state.config.input_dim));
    }
  }

  void run_sharded(std::size_t count, const std::function<void(std::size_t)>& work) const {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(train_.workers), count);
    if (workers <= 1) {
      for (std::size_t k = 0; k < count; ++k) work(k);
      return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex mu;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < count; k += workers) {
          try {
            work(k);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  ModelConfig model_;
  LossConfig loss_;
  TrainConfig train_;
  DetectionConfig detect_;
  std::uint64_t seed_;
};

}  // namespace scdnet
