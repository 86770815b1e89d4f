#pragma once

// Frame-level targets derived from change points: triangular fuzzy labels for
// the classification loss and segment maps for contrastive sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "scdnet/annotations.hpp"
#include "scdnet/errors.hpp"

namespace scdnet {

inline constexpr double kDefaultFrameRate = 50.0;
inline constexpr double kFuzzyRadius = 0.2;

struct FrameGrid {
  double frame_rate = kDefaultFrameRate;
  std::int64_t num_frames = 1;
  double origin = 0.0;

  FrameGrid() = default;
  FrameGrid(double rate, std::int64_t frames, double origin_s = 0.0)
      : frame_rate(rate), num_frames(frames), origin(origin_s) {
    if (!(rate > 0.0) || frames < 1) {
      throw ValidationError("frame grid needs a positive rate and at least one frame");
    }
  }

  double instant(std::int64_t i) const { return origin + static_cast<double>(i) / frame_rate; }
  double end_time() const { return instant(num_frames); }
  // Nearest frame, ties rounded up.
  std::int64_t snap(double t) const {
    return static_cast<std::int64_t>(std::floor((t - origin) * frame_rate + 0.5));
  }
};

// Frame count covering [0, extent_end) at the given rate.
inline std::int64_t frames_for(double extent_end, double frame_rate) {
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(extent_end * frame_rate)));
}

using LabelSignal = std::vector<double>;

// y_i = max_c max(0, 1 - |t_i - c| / radius); overlapping ramps combine by max.
inline LabelSignal fuzzy_labels(const ChangePoints& cp, const FrameGrid& grid,
                                double radius = kFuzzyRadius) {
  LabelSignal y(static_cast<std::size_t>(grid.num_frames), 0.0);
  for (double c : cp.times) {
    // Only frames within one radius can be touched.
    const auto lo = std::max<std::int64_t>(
        0, static_cast<std::int64_t>(std::floor((c - radius - grid.origin) * grid.frame_rate)) - 1);
    const auto hi = std::min<std::int64_t>(
        grid.num_frames - 1,
        static_cast<std::int64_t>(std::ceil((c + radius - grid.origin) * grid.frame_rate)) + 1);
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double v = 1.0 - std::abs(grid.instant(i) - c) / radius;
      auto& slot = y[static_cast<std::size_t>(i)];
      if (v > slot) slot = v;
    }
  }
  return y;
}

inline void write_labels_csv(const LabelSignal& y, std::ostream& out) {
  out << "frame_index,value\n";
  char buf[32];
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", y[i]);
    out << i << ',' << buf << '\n';
  }
}

struct FrameRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t size() const { return end - begin; }
  bool operator==(const FrameRange&) const = default;
};

// Partition of [0, T) into half-open frame runs between snapped change points.
class SegmentMap {
 public:
  SegmentMap() = default;

  // `interior` are boundary frames strictly inside (0, T); duplicates collapse.
  SegmentMap(std::int64_t num_frames, std::vector<std::int64_t> interior) : num_frames_(num_frames) {
    if (num_frames < 1) throw ValidationError("segment map needs at least one frame");
    std::sort(interior.begin(), interior.end());
    interior.erase(std::unique(interior.begin(), interior.end()), interior.end());
    std::int64_t prev = 0;
    for (std::int64_t b : interior) {
      if (b <= 0 || b >= num_frames) continue;
      boundaries_.push_back(b);
      segments_.push_back({prev, b});
      prev = b;
    }
    segments_.push_back({prev, num_frames});
    segment_of_.resize(static_cast<std::size_t>(num_frames));
    for (std::size_t s = 0; s < segments_.size(); ++s) {
      for (std::int64_t f = segments_[s].begin; f < segments_[s].end; ++f) {
        segment_of_[static_cast<std::size_t>(f)] = s;
      }
    }
  }

  std::int64_t num_frames() const { return num_frames_; }
  const std::vector<std::int64_t>& boundaries() const { return boundaries_; }
  const std::vector<FrameRange>& segments() const { return segments_; }
  std::size_t segment_of(std::int64_t frame) const {
    return segment_of_.at(static_cast<std::size_t>(frame));
  }

 private:
  std::int64_t num_frames_ = 0;
  std::vector<std::int64_t> boundaries_;
  std::vector<FrameRange> segments_;
  std::vector<std::size_t> segment_of_;
};

inline SegmentMap segment_map(const ChangePoints& cp, const FrameGrid& grid) {
  std::vector<std::int64_t> frames;
  frames.reserve(cp.times.size());
  for (double c : cp.times) frames.push_back(grid.snap(c));
  return SegmentMap(grid.num_frames, std::move(frames));
}

}  // namespace scdnet
