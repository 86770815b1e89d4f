#pragma once

// Speaker annotations: RTTM ingestion, change-point derivation, and the
// reference segmentation used by the purity/coverage metrics.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "scdnet/errors.hpp"

namespace scdnet {

inline constexpr double kDefaultMergeTolerance = 0.02;

struct TimeSpan {
  double start = 0.0;
  double end = 0.0;

  double duration() const { return end - start; }
  bool empty() const { return !(end > start); }
  bool contains(const TimeSpan& o) const { return o.start >= start && o.end <= end; }
  bool operator==(const TimeSpan&) const = default;
};

inline double overlap(const TimeSpan& a, const TimeSpan& b) {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

struct Turn {
  TimeSpan span;
  std::string speaker;
  bool operator==(const Turn&) const = default;
};

// Sorted, validated list of speaker turns over a recording extent.
class Annotation {
 public:
  Annotation() = default;

  // Sorts entries by start. The extent defaults to [0, max end].
  explicit Annotation(std::vector<Turn> entries, std::optional<TimeSpan> extent = std::nullopt,
                      std::string file_id = "file")
      : entries_(std::move(entries)), file_id_(std::move(file_id)) {
    std::stable_sort(entries_.begin(), entries_.end(), [](const Turn& a, const Turn& b) {
      return std::tie(a.span.start, a.span.end, a.speaker) <
             std::tie(b.span.start, b.span.end, b.speaker);
    });
    double max_end = 0.0;
    for (const Turn& t : entries_) {
      if (!(t.span.start >= 0.0) || !std::isfinite(t.span.end)) {
        throw ValidationError("turn for '" + t.speaker + "' has invalid bounds");
      }
      if (!(t.span.end > t.span.start)) {
        throw ValidationError("turn for '" + t.speaker + "' at " + std::to_string(t.span.start) +
                              " has non-positive duration");
      }
      max_end = std::max(max_end, t.span.end);
    }
    extent_ = extent.value_or(TimeSpan{0.0, max_end});
    if (extent_.end < extent_.start || extent_.start < 0.0) {
      throw ValidationError("annotation extent is inverted or negative");
    }
    for (const Turn& t : entries_) {
      if (!extent_.contains(t.span)) {
        throw ValidationError("turn for '" + t.speaker + "' lies outside the extent");
      }
    }
    std::map<std::string, double> last_end;
    for (const Turn& t : entries_) {
      auto it = last_end.find(t.speaker);
      if (it != last_end.end() && t.span.start < it->second) {
        throw ValidationError("overlapping turns for speaker '" + t.speaker + "' at " +
                              std::to_string(t.span.start));
      }
      last_end[t.speaker] = std::max(it == last_end.end() ? 0.0 : it->second, t.span.end);
    }
  }

  const std::vector<Turn>& entries() const { return entries_; }
  const TimeSpan& extent() const { return extent_; }
  const std::string& file_id() const { return file_id_; }
  bool empty() const { return entries_.empty(); }

  bool operator==(const Annotation&) const = default;

 private:
  std::vector<Turn> entries_;
  TimeSpan extent_{};
  std::string file_id_ = "file";
};

// Equality up to `tol` seconds on every boundary; RTTM stores milliseconds.
inline bool approx_equal(const Annotation& a, const Annotation& b, double tol = 1e-6) {
  auto near = [tol](double x, double y) { return std::abs(x - y) <= tol; };
  if (a.file_id() != b.file_id() || a.entries().size() != b.entries().size()) return false;
  if (!near(a.extent().start, b.extent().start) || !near(a.extent().end, b.extent().end)) {
    return false;
  }
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const Turn& x = a.entries()[i];
    const Turn& y = b.entries()[i];
    if (x.speaker != y.speaker || !near(x.span.start, y.span.start) ||
        !near(x.span.end, y.span.end)) {
      return false;
    }
  }
  return true;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Parses SPEAKER lines; '#' comments and blank lines are skipped. The file id
// is taken from the first line (field 2).
inline Annotation parse_rttm(std::istream& in, std::optional<TimeSpan> extent = std::nullopt) {
  std::vector<Turn> turns;
  std::string file_id;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0].front() == '#') continue;
    if (fields.size() < 9) {
      throw ParseError(lineno, "expected at least 9 fields, got " + std::to_string(fields.size()));
    }
    if (fields[0] != "SPEAKER") {
      throw ParseError(lineno, "unsupported record type '" + std::string(fields[0]) + "'");
    }
    const auto onset = detail::parse_double(fields[3]);
    const auto dur = detail::parse_double(fields[4]);
    if (!onset || !dur) throw ParseError(lineno, "onset/duration are not numbers");
    if (*dur < 0.0) {
      throw ValidationError("line " + std::to_string(lineno) + ": negative duration");
    }
    if (*onset < 0.0) {
      throw ValidationError("line " + std::to_string(lineno) + ": negative onset");
    }
    if (file_id.empty()) file_id = std::string(fields[1]);
    turns.push_back(Turn{{*onset, *onset + *dur}, std::string(fields[7])});
  }
  return Annotation(std::move(turns), extent, file_id.empty() ? "file" : file_id);
}

inline Annotation parse_rttm(std::string_view text, std::optional<TimeSpan> extent = std::nullopt) {
  std::istringstream in{std::string(text)};
  return parse_rttm(in, extent);
}

inline void write_rttm(const Annotation& a, std::ostream& out) {
  char buf[64];
  for (const Turn& t : a.entries()) {
    std::snprintf(buf, sizeof buf, "%.3f %.3f", t.span.start, t.span.duration());
    out << "SPEAKER " << a.file_id() << " 1 " << buf << " <NA> <NA> " << t.speaker
        << " <NA> <NA>\n";
  }
}

inline std::string to_rttm(const Annotation& a) {
  std::ostringstream out;
  write_rttm(a, out);
  return out.str();
}

struct ChangePoints {
  std::vector<double> times;
  bool operator==(const ChangePoints&) const = default;
};

// Sorts and merges runs of instants whose neighbours are closer than `tolerance`
// into their mean.
inline ChangePoints merge_close(std::vector<double> times, double tolerance) {
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  ChangePoints out;
  std::size_t i = 0;
  while (i < times.size()) {
    std::size_t j = i + 1;
    double acc = times[i];
    while (j < times.size() && times[j] - times[j - 1] < tolerance) acc += times[j++];
    out.times.push_back(acc / static_cast<double>(j - i));
    i = j;
  }
  return out;
}

// Every turn onset and offset is a change point, whoever else is speaking.
inline ChangePoints derive_change_points(const Annotation& a,
                                         double merge_tolerance = kDefaultMergeTolerance) {
  std::vector<double> times;
  times.reserve(a.entries().size() * 2);
  for (const Turn& t : a.entries()) {
    times.push_back(t.span.start);
    times.push_back(t.span.end);
  }
  return merge_close(std::move(times), merge_tolerance);
}

// Partition of `extent` cut at every change point strictly inside it.
inline std::vector<TimeSpan> partition(const ChangePoints& cp, const TimeSpan& extent) {
  std::vector<TimeSpan> out;
  if (extent.empty()) return out;
  double prev = extent.start;
  for (double c : cp.times) {
    if (c <= extent.start || c >= extent.end) continue;
    if (c <= prev) continue;
    out.push_back({prev, c});
    prev = c;
  }
  out.push_back({prev, extent.end});
  return out;
}

inline std::vector<TimeSpan> reference_segmentation(const Annotation& a,
                                                    double merge_tolerance = kDefaultMergeTolerance) {
  return partition(derive_change_points(a, merge_tolerance), a.extent());
}

}  // namespace scdnet
