#pragma once

// Anchor/positive/negative frame triplets for the contrastive objective.
// Positives come from the anchor's own segment, negatives from one adjacent
// segment, or a random unit vector when the utterance has a single segment.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "scdnet/errors.hpp"
#include "scdnet/labeling.hpp"
#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet {

struct Triplet {
  static constexpr std::int64_t kRandomVector = -1;

  std::int64_t anchor = 0;
  std::int64_t positive = 0;
  std::int64_t negative = kRandomVector;

  bool random_negative() const { return negative == kRandomVector; }
  bool operator==(const Triplet&) const = default;
};

struct SamplerConfig {
  std::uint64_t rng_seed = 0;
  std::int64_t min_segment_frames = 2;
};

// One triplet per frame of every segment holding at least `min_segment_frames`
// frames, in frame order.
inline std::vector<Triplet> sample_triplets(const SegmentMap& seg, Rng& rng,
                                            std::int64_t min_segment_frames = 2) {
  if (min_segment_frames < 1) throw ConfigError("min_segment_frames must be >= 1");
  const auto& segments = seg.segments();
  std::vector<Triplet> out;
  out.reserve(static_cast<std::size_t>(seg.num_frames()));
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const FrameRange own = segments[s];
    // p != i needs a second frame regardless of the configured minimum.
    if (own.size() < min_segment_frames || own.size() < 2) continue;
    const bool has_left = s > 0;
    const bool has_right = s + 1 < segments.size();
    for (std::int64_t i = own.begin; i < own.end; ++i) {
      Triplet t;
      t.anchor = i;
      std::int64_t p = own.begin + uniform_int(rng, 0, own.size() - 2);
      if (p >= i) ++p;
      t.positive = p;
      if (has_left || has_right) {
        bool left = has_left;
        if (has_left && has_right) left = uniform_int(rng, 0, 1) == 0;
        const FrameRange other = segments[left ? s - 1 : s + 1];
        t.negative = uniform_int(rng, other.begin, other.end - 1);
      }
      out.push_back(t);
    }
  }
  return out;
}

inline std::vector<Triplet> sample_triplets(const SegmentMap& seg, const SamplerConfig& cfg) {
  Rng rng(cfg.rng_seed);
  return sample_triplets(seg, rng, cfg.min_segment_frames);
}

// Standard-normal draw scaled to unit L2 norm, as a 1xD row.
template <typename T>
Matrix<T> materialize_negative(std::int64_t dim, Rng& rng) {
  if (dim < 1) throw ShapeError("materialize_negative: dimension must be >= 1");
  Eigen::Matrix<double, 1, Eigen::Dynamic> v(dim);
  double norm = 0.0;
  do {
    for (std::int64_t d = 0; d < dim; ++d) v(d) = standard_normal(rng);
    norm = v.norm();
  } while (!(norm > 1e-12));
  return (v / norm).template cast<T>();
}

inline void write_triplets_csv(const std::vector<Triplet>& triplets, std::ostream& out) {
  out << "anchor,positive,negative_or_RAND\n";
  for (const Triplet& t : triplets) {
    out << t.anchor << ',' << t.positive << ',';
    if (t.random_negative()) {
      out << "RAND";
    } else {
      out << t.negative;
    }
    out << '\n';
  }
}

}  // namespace scdnet
