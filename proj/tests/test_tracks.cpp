#include <gtest/gtest.h>

#include "sfmkit/sfm/tracks.hpp"
#include "support/expect_error.hpp"

namespace {

using namespace sfm;

PairMatches Pair(int i, int j, std::vector<std::pair<int, int>> links) {
  PairMatches p;
  p.i = i;
  p.j = j;
  for (auto [a, b] : links) p.inliers.push_back({a, b, 0.0});
  return p;
}

TEST(BuildTracks, TransitiveChain) {
  // A = 0, B = 1, C = 2.
  const std::vector<PairMatches> pairs{Pair(0, 1, {{0, 3}}), Pair(1, 2, {{3, 7}})};
  const std::vector<int> counts{5, 5, 10};
  const auto tracks = BuildTracks(pairs, counts);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].status, TrackStatus::kCandidate);
  const std::vector<TrackObservation> expected{{0, 0}, {1, 3}, {2, 7}};
  EXPECT_EQ(tracks[0].observations, expected);
  ASSERT_NE(tracks[0].find(1), nullptr);
  EXPECT_EQ(tracks[0].find(1)->keypoint, 3);
  EXPECT_EQ(tracks[0].find(3), nullptr);
}

TEST(BuildTracks, TwoKeypointsInOneImageAreRejected) {
  const std::vector<PairMatches> pairs{Pair(0, 1, {{0, 3}, {1, 3}})};
  const std::vector<int> counts{2, 4};
  const auto tracks = BuildTracks(pairs, counts);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].status, TrackStatus::kRejected);
}

TEST(BuildTracks, IndependentComponentsOrderedBySmallestNode) {
  const std::vector<PairMatches> pairs{Pair(1, 2, {{0, 0}}), Pair(0, 2, {{2, 1}}), Pair(0, 1, {{1, 4}})};
  const std::vector<int> counts{3, 5, 2};
  const auto tracks = BuildTracks(pairs, counts);
  ASSERT_EQ(tracks.size(), 3u);
  EXPECT_EQ(tracks[0].observations, (std::vector<TrackObservation>{{0, 1}, {1, 4}}));
  EXPECT_EQ(tracks[1].observations, (std::vector<TrackObservation>{{0, 2}, {2, 1}}));
  EXPECT_EQ(tracks[2].observations, (std::vector<TrackObservation>{{1, 0}, {2, 0}}));
  for (const Track& t : tracks) EXPECT_GE(t.observations.size(), 2u);
}

TEST(BuildTracks, InvalidReferences) {
  const std::vector<int> counts{2, 2};
  const std::vector<PairMatches> bad_image{Pair(0, 2, {{0, 0}})};
  EXPECT_SFM_ERROR(BuildTracks(bad_image, counts), ErrorCode::kInvalidArgument);
  const std::vector<PairMatches> bad_kp{Pair(0, 1, {{0, 2}})};
  EXPECT_SFM_ERROR(BuildTracks(bad_kp, counts), ErrorCode::kInvalidArgument);
}

TEST(DisjointSets, UnionFind) {
  DisjointSets d(6);
  d.unite(0, 1);
  d.unite(2, 3);
  d.unite(1, 3);
  EXPECT_EQ(d.find(0), d.find(2));
  EXPECT_NE(d.find(0), d.find(4));
  EXPECT_NE(d.find(4), d.find(5));
}

}  // namespace
