#pragma once

// Change-point detection from frame probabilities and segmentation scoring
// with purity, coverage and their harmonic mean.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "scdnet/annotations.hpp"
#include "scdnet/errors.hpp"
#include "scdnet/labeling.hpp"

namespace scdnet {

struct DetectionConfig {
  double threshold = 0.35;
  double min_gap = 0.2;  // seconds

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("detect.threshold must be in (0, 1)");
    if (!(min_gap >= 0.0)) throw ConfigError("detect.min_gap must be >= 0");
  }
};

namespace detail {
inline constexpr double kTimeSlack = 1e-9;
}

// Each maximal run of frames with p >= threshold yields its leftmost argmax.
// Peaks closer than min_gap are merged into the more probable one (earlier on ties).
inline ChangePoints detect_change_points(std::span<const double> pred, const FrameGrid& grid,
                                         const DetectionConfig& cfg = {}) {
  struct Peak {
    double time;
    double prob;
  };
  std::vector<Peak> kept;
  const auto n = static_cast<std::int64_t>(pred.size());
  std::int64_t i = 0;
  while (i < n) {
    if (pred[static_cast<std::size_t>(i)] < cfg.threshold) {
      ++i;
      continue;
    }
    std::int64_t best = i;
    while (i < n && pred[static_cast<std::size_t>(i)] >= cfg.threshold) {
      if (pred[static_cast<std::size_t>(i)] > pred[static_cast<std::size_t>(best)]) best = i;
      ++i;
    }
    const Peak p{grid.instant(best), pred[static_cast<std::size_t>(best)]};
    if (!kept.empty() && p.time - kept.back().time < cfg.min_gap - detail::kTimeSlack) {
      if (p.prob > kept.back().prob) kept.back() = p;
    } else {
      kept.push_back(p);
    }
  }
  ChangePoints out;
  for (const Peak& p : kept) out.times.push_back(p.time);
  return out;
}

inline std::vector<TimeSpan> segmentation_from_points(const ChangePoints& cp, const TimeSpan& extent) {
  return partition(cp, extent);
}

struct FileScore {
  std::string file_id;
  double coverage_num = 0.0, coverage_den = 0.0;
  double purity_num = 0.0, purity_den = 0.0;

  double coverage() const { return coverage_den > 0.0 ? coverage_num / coverage_den : 1.0; }
  double purity() const { return purity_den > 0.0 ? purity_num / purity_den : 1.0; }
};

inline double harmonic_f1(double purity, double coverage) {
  if (purity <= 0.0 || coverage <= 0.0) return 0.0;
  return 2.0 * purity * coverage / (purity + coverage);
}

struct MetricReport {
  double coverage = 1.0;
  double purity = 1.0;
  double f1 = 1.0;
  std::vector<FileScore> files;
};

namespace detail {

// sum over a of max over b |a ∩ b|, for two sorted partitions of one extent.
inline double best_overlap_sum(const std::vector<TimeSpan>& a, const std::vector<TimeSpan>& b) {
  double total = 0.0;
  std::size_t j = 0;
  for (const TimeSpan& s : a) {
    while (j < b.size() && b[j].end <= s.start) ++j;
    double best = 0.0;
    for (std::size_t k = j; k < b.size() && b[k].start < s.end; ++k) {
      best = std::max(best, overlap(s, b[k]));
    }
    total += best;
  }
  return total;
}

inline double total_duration(const std::vector<TimeSpan>& segs) {
  double d = 0.0;
  for (const TimeSpan& s : segs) d += s.duration();
  return d;
}

}  // namespace detail

// Coverage: reference segments against their best hypothesis match;
// purity: the same with roles swapped. Both segmentations must partition the same extent.
inline FileScore score_file(const std::vector<TimeSpan>& reference,
                            const std::vector<TimeSpan>& hypothesis, std::string file_id = "") {
  auto extent_of = [](const std::vector<TimeSpan>& s) {
    return s.empty() ? TimeSpan{} : TimeSpan{s.front().start, s.back().end};
  };
  const TimeSpan re = extent_of(reference);
  const TimeSpan he = extent_of(hypothesis);
  if (reference.empty() != hypothesis.empty() || std::abs(re.start - he.start) > 1e-9 ||
      std::abs(re.end - he.end) > 1e-9) {
    throw ValidationError("segmentation extents differ for '" + file_id + "': reference [" +
                          std::to_string(re.start) + ", " + std::to_string(re.end) +
                          "] vs hypothesis [" + std::to_string(he.start) + ", " +
                          std::to_string(he.end) + "]");
  }
  FileScore s;
  s.file_id = std::move(file_id);
  s.coverage_num = detail::best_overlap_sum(reference, hypothesis);
  s.coverage_den = detail::total_duration(reference);
  s.purity_num = detail::best_overlap_sum(hypothesis, reference);
  s.purity_den = detail::total_duration(hypothesis);
  return s;
}

// Micro-average: numerators and denominators are summed across files.
inline MetricReport aggregate(std::vector<FileScore> files) {
  MetricReport r;
  double cn = 0, cd = 0, pn = 0, pd = 0;
  for (const FileScore& f : files) {
    cn += f.coverage_num;
    cd += f.coverage_den;
    pn += f.purity_num;
    pd += f.purity_den;
  }
  r.coverage = cd > 0.0 ? cn / cd : 1.0;
  r.purity = pd > 0.0 ? pn / pd : 1.0;
  r.f1 = harmonic_f1(r.purity, r.coverage);
  r.files = std::move(files);
  return r;
}

inline MetricReport purity_coverage(const std::vector<TimeSpan>& reference,
                                    const std::vector<TimeSpan>& hypothesis) {
  return aggregate({score_file(reference, hypothesis)});
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json files = nlohmann::json::array();
  for (const FileScore& f : r.files) {
    files.push_back({{"file_id", f.file_id},
                     {"coverage", f.coverage()},
                     {"purity", f.purity()},
                     {"f1", harmonic_f1(f.purity(), f.coverage())}});
  }
  return {{"coverage", r.coverage}, {"purity", r.purity}, {"f1", r.f1}, {"files", files}};
}

using HypothesisPoints = std::map<std::string, ChangePoints>;

inline void write_points_csv(const HypothesisPoints& points, std::ostream& out) {
  out << "file_id,time_seconds\n";
  char buf[32];
  for (const auto& [id, cp] : points) {
    for (double t : cp.times) {
      std::snprintf(buf, sizeof buf, "%.6f", t);
      out << id << ',' << buf << '\n';
    }
  }
}

inline HypothesisPoints read_points_csv(std::istream& in) {
  HypothesisPoints out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("file_id", 0) == 0)) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) throw ParseError(lineno, "expected file_id,time_seconds");
    const auto t = detail::parse_double(std::string_view(line).substr(comma + 1));
    if (!t) throw ParseError(lineno, "time is not a number");
    out[line.substr(0, comma)].times.push_back(*t);
  }
  for (auto& [id, cp] : out) std::sort(cp.times.begin(), cp.times.end());
  return out;
}

}  // namespace scdnet
