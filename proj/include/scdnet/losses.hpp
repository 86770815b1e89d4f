#pragma once

// Training objective: frame classification against fuzzy labels plus the
// per-block contrastive term, combined as L = Lp + alpha * Lc.
//
// Raw cosine similarity S lies in [-1, 1]; before the logarithm it is mapped
// to s = clamp((S + 1) / 2, eps, 1 - eps), so every log argument is in
// [eps, 1 - eps] and the loss is finite for any input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "scdnet/errors.hpp"
#include "scdnet/model.hpp"
#include "scdnet/rng.hpp"
#include "scdnet/sampling.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet {

enum class NormKind { kL1, kL2 };

struct LossConfig {
  double alpha = 0.05;
  double similarity_epsilon = 1e-7;
  NormKind norm = NormKind::kL2;

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("loss.alpha must be >= 0");
    if (!(similarity_epsilon > 0.0 && similarity_epsilon < 0.5)) {
      throw ConfigError("loss.similarity_epsilon must be in (0, 0.5)");
    }
  }
};

inline double remap_similarity(double cosine, double eps) {
  return std::clamp((cosine + 1.0) / 2.0, eps, 1.0 - eps);
}

// Mean |pred - target| (L1) or mean (pred - target)^2 (L2).
inline double classification_loss(std::span<const double> pred, std::span<const double> target,
                                  const LossConfig& cfg = {}) {
  if (pred.size() != target.size()) {
    throw ShapeError("classification_loss: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += cfg.norm == NormKind::kL1 ? std::abs(d) : d * d;
  }
  return acc / static_cast<double>(pred.size());
}

inline double total_loss(double classification, double contrastive, const LossConfig& cfg = {}) {
  return classification + cfg.alpha * contrastive;
}

struct ContrastiveValue {
  double value = 0.0;
  bool no_anchors = false;  // set when the triplet list was empty
};

// Fresh unit negatives for every RANDOM_VECTOR triplet, drawn layer by layer in
// triplet order. Both loss routes consume the generator in this order.
template <typename T>
std::vector<Matrix<T>> draw_random_negatives(std::span<const Triplet> triplets, std::size_t layers,
                                             std::int64_t dim, Rng& rng) {
  std::vector<Matrix<T>> out(layers);
  const auto count = std::count_if(triplets.begin(), triplets.end(),
                                   [](const Triplet& t) { return t.random_negative(); });
  for (std::size_t j = 0; j < layers; ++j) {
    out[j].resize(count, dim);
    Eigen::Index r = 0;
    for (const Triplet& t : triplets) {
      if (t.random_negative()) out[j].row(r++) = materialize_negative<T>(dim, rng);
    }
  }
  return out;
}

inline double row_cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                         const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double na = std::max(a.norm(), kCosineNormFloor);
  const double nb = std::max(b.norm(), kCosineNormFloor);
  return a.dot(b) / (na * nb);
}

// -(1 / (T' N)) sum_i sum_j [log s+_ij + log(1 - s-_ij)], T' = eligible anchors.
template <typename T>
ContrastiveValue contrastive_loss(const std::vector<Matrix<T>>& hidden,
                                  std::span<const Triplet> triplets, const LossConfig& cfg,
                                  Rng& rng) {
  ContrastiveValue out;
  if (triplets.empty() || hidden.empty()) {
    out.no_anchors = true;
    return out;
  }
  const auto randoms = draw_random_negatives<double>(triplets, hidden.size(), hidden[0].cols(), rng);
  const double eps = cfg.similarity_epsilon;
  double acc = 0.0;
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    const Matrix<double> h = hidden[j].template cast<double>();
    Eigen::Index r = 0;
    for (const Triplet& t : triplets) {
      const double sp = remap_similarity(row_cosine(h.row(t.anchor), h.row(t.positive)), eps);
      const double sn = t.random_negative()
                            ? remap_similarity(row_cosine(h.row(t.anchor), randoms[j].row(r++)), eps)
                            : remap_similarity(row_cosine(h.row(t.anchor), h.row(t.negative)), eps);
      acc += std::log(sp) + std::log(1.0 - sn);
    }
  }
  out.value = -acc / (static_cast<double>(triplets.size()) * static_cast<double>(hidden.size()));
  return out;
}

template <typename T>
ContrastiveValue contrastive_loss(const ForwardCache<T>& cache, std::span<const Triplet> triplets,
                                  const LossConfig& cfg, Rng& rng) {
  return contrastive_loss(cache.hidden, triplets, cfg, rng);
}

namespace ops {

template <typename T>
Var classification_loss(Tape<T>& tape, Var pred, std::span<const double> target,
                        const LossConfig& cfg) {
  const auto& pv = tape.value(pred);
  if (pv.size() != static_cast<Eigen::Index>(target.size())) {
    throw ShapeError("classification_loss: " + std::to_string(pv.size()) + " predictions vs " +
                     std::to_string(target.size()) + " targets");
  }
  Matrix<T> y(pv.rows(), pv.cols());
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = static_cast<T>(target[static_cast<std::size_t>(i)]);
  const Var diff = sub(tape, pred, tape.constant(std::move(y)));
  return mean(tape, cfg.norm == NormKind::kL1 ? abs(tape, diff) : square(tape, diff));
}

// Returns a constant 0 when there are no triplets.
template <typename T>
Var contrastive_loss(Tape<T>& tape, std::span<const Var> hidden, std::span<const Triplet> triplets,
                     const LossConfig& cfg, Rng& rng) {
  if (triplets.empty() || hidden.empty()) return tape.constant(Matrix<T>::Zero(1, 1));
  const Eigen::Index frames = tape.value(hidden[0]).rows();
  const auto randoms =
      draw_random_negatives<T>(triplets, hidden.size(), tape.value(hidden[0]).cols(), rng);
  std::vector<Eigen::Index> anchors, positives, negatives;
  Eigen::Index r = 0;
  for (const Triplet& t : triplets) {
    anchors.push_back(t.anchor);
    positives.push_back(t.positive);
    negatives.push_back(t.random_negative() ? frames + r++ : t.negative);
  }
  const T eps = static_cast<T>(cfg.similarity_epsilon);
  std::vector<Var> terms;
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    const Var h = hidden[j];
    const Var pool = r > 0 ? vconcat(tape, h, tape.constant(randoms[j])) : h;
    const Var a = gather_rows(tape, h, anchors);
    const Var p = gather_rows(tape, h, positives);
    const Var n = gather_rows(tape, pool, negatives);
    const Var sp = clamp(tape, affine(tape, cosine_rows(tape, a, p), T(0.5), T(0.5)), eps, T(1) - eps);
    const Var sn = clamp(tape, affine(tape, cosine_rows(tape, a, n), T(0.5), T(0.5)), eps, T(1) - eps);
    terms.push_back(sum(tape, log(tape, sp)));
    terms.push_back(sum(tape, log(tape, affine(tape, sn, T(-1), T(1)))));
  }
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(tape, acc, terms[i]);
  const double denom = static_cast<double>(triplets.size()) * static_cast<double>(hidden.size());
  return scale(tape, acc, static_cast<T>(-1.0 / denom));
}

template <typename T>
Var total_loss(Tape<T>& tape, Var classification, Var contrastive, const LossConfig& cfg) {
  if (cfg.alpha == 0.0) return classification;
  return add(tape, classification, scale(tape, contrastive, static_cast<T>(cfg.alpha)));
}

}  // namespace ops
}  // namespace scdnet
