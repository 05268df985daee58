#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"
#include "sfmkit/matching/matching.hpp"

namespace sfm {

struct TrackObservation {
  int image = 0;
  int keypoint = 0;

  friend bool operator==(const TrackObservation&, const TrackObservation&) = default;
};

enum class TrackStatus { kCandidate, kTriangulated, kRejected };

struct Track {
  Vec3 point;  // meaningful only when triangulated
  std::vector<TrackObservation> observations;  // sorted by image
  TrackStatus status = TrackStatus::kCandidate;

  const TrackObservation* find(int image) const {
    for (const auto& o : observations)
      if (o.image == image) return &o;
    return nullptr;
  }
};

// Verified correspondences between images i < j.
struct PairMatches {
  int i = 0;
  int j = 0;
  int putative = 0;  // ratio-test survivors before geometric verification
  std::vector<Match> inliers;
  Mat3 f;
};

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<int> parent_;
  std::vector<int> rank_;
};

// Connected components of (image, keypoint) nodes under the inlier matches.
// Components with two keypoints in one image are returned as rejected.
// Tracks are ordered by their smallest (image, keypoint) node.
inline std::vector<Track> BuildTracks(std::span<const PairMatches> pairs, std::span<const int> keypoint_counts) {
  std::vector<int> offset(keypoint_counts.size() + 1, 0);
  for (std::size_t i = 0; i < keypoint_counts.size(); ++i) offset[i + 1] = offset[i] + keypoint_counts[i];
  const int nodes = offset.back();
  DisjointSets sets(static_cast<std::size_t>(nodes));
  std::vector<char> used(nodes, 0);
  for (const PairMatches& p : pairs) {
    if (p.i < 0 || p.j < 0 || p.i >= static_cast<int>(keypoint_counts.size()) ||
        p.j >= static_cast<int>(keypoint_counts.size()))
      Fail(ErrorCode::kInvalidArgument, "pair references an unknown image");
    for (const Match& m : p.inliers) {
      if (m.idx_left < 0 || m.idx_left >= keypoint_counts[p.i] || m.idx_right < 0 ||
          m.idx_right >= keypoint_counts[p.j])
        Fail(ErrorCode::kInvalidArgument, "match references an unknown keypoint");
      const int a = offset[p.i] + m.idx_left, b = offset[p.j] + m.idx_right;
      used[a] = used[b] = 1;
      sets.unite(a, b);
    }
  }

  std::vector<int> track_of_root(nodes, -1);
  std::vector<Track> tracks;
  int image = 0;
  for (int node = 0; node < nodes; ++node) {
    while (node >= offset[image + 1]) ++image;
    if (!used[node]) continue;
    const int root = sets.find(node);
    if (track_of_root[root] < 0) {
      track_of_root[root] = static_cast<int>(tracks.size());
      tracks.emplace_back();
    }
    Track& t = tracks[track_of_root[root]];
    if (!t.observations.empty() && t.observations.back().image == image) t.status = TrackStatus::kRejected;
    t.observations.push_back({image, node - offset[image]});
  }
  return tracks;
}

}  // namespace sfm
