#include <gtest/gtest.h>

#include <algorithm>

#include "scdnet/annotations.hpp"
#include "scdnet/errors.hpp"
#include "support/oracles.hpp"

using namespace scdnet;

namespace {

Annotation ann(std::vector<Turn> t, std::optional<TimeSpan> extent = std::nullopt) {
  return Annotation(std::move(t), extent, "f");
}

std::vector<double> times(const ChangePoints& cp) { return cp.times; }

}  // namespace

TEST(Rttm, ParsesFieldsIntoTurns) {
  const Annotation a = parse_rttm(
      "SPEAKER f 1 0.00 2.00 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 2.00 3.00 <NA> <NA> B <NA> <NA>\n");
  ASSERT_EQ(a.entries().size(), 2u);
  EXPECT_EQ(a.entries()[0], (Turn{{0.0, 2.0}, "A"}));
  EXPECT_EQ(a.entries()[1], (Turn{{2.0, 5.0}, "B"}));
  EXPECT_EQ(a.extent(), (TimeSpan{0.0, 5.0}));
  EXPECT_EQ(a.file_id(), "f");
}

TEST(Rttm, EmptyInputGivesEmptyAnnotation) {
  const Annotation a = parse_rttm("");
  EXPECT_TRUE(a.empty());
  EXPECT_EQ(a.extent(), (TimeSpan{0.0, 0.0}));
}

TEST(Rttm, CommentsAndBlankLinesAreSkipped) {
  const Annotation a = parse_rttm("# header\n\nSPEAKER f 1 1.5 0.5 <NA> <NA> A <NA> <NA>\n");
  ASSERT_EQ(a.entries().size(), 1u);
  EXPECT_EQ(a.entries()[0].span, (TimeSpan{1.5, 2.0}));
}

TEST(Rttm, SameSpeakerOverlapIsRejected) {
  EXPECT_THROW(parse_rttm("SPEAKER f 1 0 3 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 2 3 <NA> <NA> A <NA> <NA>\n"),
               ValidationError);
}

TEST(Rttm, DistinctSpeakersMayOverlap) {
  EXPECT_NO_THROW(parse_rttm("SPEAKER f 1 0 3 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 2 3 <NA> <NA> B <NA> <NA>\n"));
}

TEST(Rttm, MalformedLineCarriesLineNumber) {
  try {
    parse_rttm("SPEAKER f 1 0 1 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 zero 1 <NA> <NA> A <NA> <NA>\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  try {
    parse_rttm("\nSPEAKER f 1 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_rttm("LEXEME f 1 0 1 <NA> <NA> A <NA> <NA>\n"), ParseError);
}

TEST(Rttm, NegativeDurationIsValidationError) {
  EXPECT_THROW(parse_rttm("SPEAKER f 1 1.0 -0.5 <NA> <NA> A <NA> <NA>\n"), ValidationError);
}

TEST(Rttm, WriterUsesMillisecondPrecision) {
  const Annotation a = ann({{{0.25, 1.0}, "A"}});
  EXPECT_EQ(to_rttm(a), "SPEAKER f 1 0.250 0.750 <NA> <NA> A <NA> <NA>\n");
}

TEST(Rttm, ExtentOverrideMustContainTurns) {
  EXPECT_NO_THROW(parse_rttm("SPEAKER f 1 0 1 <NA> <NA> A <NA> <NA>\n", TimeSpan{0.0, 10.0}));
  EXPECT_THROW(parse_rttm("SPEAKER f 1 0 1 <NA> <NA> A <NA> <NA>\n", TimeSpan{0.0, 0.5}), ValidationError);
}

TEST(Rttm, RoundTripProperty) {
  Rng rng(21);
  for (int i = 0; i < 300; ++i) {
    const Annotation a = support::random_annotation(rng, "rec" + std::to_string(i));
    Annotation b = parse_rttm(to_rttm(a));
    // An empty file has no line to carry the recording id.
    if (a.empty()) b = Annotation(b.entries(), b.extent(), a.file_id());
    EXPECT_TRUE(approx_equal(a, b)) << to_rttm(a);
    EXPECT_EQ(to_rttm(a), to_rttm(b));
  }
}

TEST(ChangePointsDerivation, AdjacentTurns) {
  EXPECT_EQ(times(derive_change_points(ann({{{0, 2}, "A"}, {{2, 5}, "B"}}))), (std::vector<double>{0, 2, 5}));
}

TEST(ChangePointsDerivation, OverlappingTurns) {
  EXPECT_EQ(times(derive_change_points(ann({{{0, 3}, "A"}, {{2, 5}, "B"}}))), (std::vector<double>{0, 2, 3, 5}));
}

TEST(ChangePointsDerivation, NearCoincidentBoundariesMergeToMean) {
  const auto cp = derive_change_points(ann({{{0, 2}, "A"}, {{2.005, 5}, "B"}}), 0.02);
  ASSERT_EQ(cp.times.size(), 3u);
  EXPECT_DOUBLE_EQ(cp.times[0], 0.0);
  EXPECT_NEAR(cp.times[1], 2.0025, 1e-12);
  EXPECT_DOUBLE_EQ(cp.times[2], 5.0);
}

TEST(ChangePointsDerivation, OrderInvariantAndIdempotent) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const Annotation a = support::random_annotation(rng);
    auto turns = a.entries();
    std::reverse(turns.begin(), turns.end());
    const Annotation b(turns, a.extent(), "f");
    const auto cp = derive_change_points(a);
    EXPECT_EQ(cp, derive_change_points(b));
    EXPECT_EQ(merge_close(cp.times, kDefaultMergeTolerance), cp);
    EXPECT_TRUE(std::is_sorted(cp.times.begin(), cp.times.end()));
    for (std::size_t k = 1; k < cp.times.size(); ++k) EXPECT_GT(cp.times[k], cp.times[k - 1]);
  }
}

TEST(ReferenceSegmentation, PartitionExamples) {
  EXPECT_EQ(partition(ChangePoints{{0, 2, 5}}, {0, 5}), (std::vector<TimeSpan>{{0, 2}, {2, 5}}));
  EXPECT_EQ(partition(ChangePoints{}, {0, 5}), (std::vector<TimeSpan>{{0, 5}}));
  EXPECT_EQ(partition(ChangePoints{{0, 2, 3, 5}}, {0, 5}), (std::vector<TimeSpan>{{0, 2}, {2, 3}, {3, 5}}));
  EXPECT_TRUE(partition(ChangePoints{{1}}, {0, 0}).empty());
}

TEST(ReferenceSegmentation, ContiguousAndCoveringExtent) {
  Rng rng(9);
  for (int i = 0; i < 300; ++i) {
    const Annotation a = support::random_annotation(rng);
    const auto seg = reference_segmentation(a);
    if (a.extent().empty()) {
      EXPECT_TRUE(seg.empty());
      continue;
    }
    ASSERT_FALSE(seg.empty());
    EXPECT_EQ(seg.front().start, a.extent().start);
    EXPECT_EQ(seg.back().end, a.extent().end);
    for (std::size_t k = 1; k < seg.size(); ++k) EXPECT_EQ(seg[k].start, seg[k - 1].end);
    for (const auto& s : seg) EXPECT_GT(s.duration(), 0.0);
  }
}
