#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "sfmkit/ba/bundle_adjustment.hpp"
#include "sfmkit/core/error.hpp"
#include "sfmkit/core/parallel.hpp"
#include "sfmkit/features/sift.hpp"
#include "sfmkit/geometry/camera.hpp"
#include "sfmkit/geometry/resection.hpp"
#include "sfmkit/geometry/two_view.hpp"
#include "sfmkit/image/image.hpp"
#include "sfmkit/matching/matching.hpp"
#include "sfmkit/sfm/tracks.hpp"

namespace sfm {

struct PipelineConfig {
  SiftParams sift;
  RansacConfig ransac;  // fundamental-matrix RANSAC; the seed also drives PnP
  double ratio = 0.75;
  int min_init_inliers = 100;
  double min_triangulation_angle_deg = 2.0;
  double max_reproj_px = 4.0;
  int local_ba_interval = 3;
  int min_pnp_correspondences = 12;
  int ba_max_iterations = 100;
  double ba_tolerance = 1e-8;
  int threads = 1;
};

inline void ValidateConfig(const PipelineConfig& cfg) {
  ValidateRansacConfig(cfg.ransac);
  if (!(cfg.ratio > 0 && cfg.ratio <= 1) || cfg.min_init_inliers < 1 || !(cfg.min_triangulation_angle_deg > 0) ||
      !(cfg.max_reproj_px > 0) || cfg.local_ba_interval < 1 || cfg.min_pnp_correspondences < 6 ||
      cfg.ba_max_iterations < 1 || !(cfg.ba_tolerance > 0) || cfg.threads < 1)
    Fail(ErrorCode::kInvalidArgument, "invalid pipeline configuration");
}

struct ReconstructionState {
  CameraIntrinsics intrinsics;
  std::vector<std::vector<Vec2>> keypoints;     // pixel positions per image
  std::vector<std::vector<float>> intensities;  // per-keypoint gray value in [0, 1]; may be empty
  std::vector<PairMatches> pairs;
  std::vector<Track> tracks;
  std::vector<std::vector<int>> track_of_keypoint;  // -1 when the keypoint is on no live track
  std::map<int, CameraPose> poses;
  std::vector<int> registered;  // registration order
  std::vector<int> failed;

  int num_images() const { return static_cast<int>(keypoints.size()); }
  bool is_registered(int image) const { return poses.contains(image); }

  int triangulated_count() const {
    return static_cast<int>(std::count_if(tracks.begin(), tracks.end(),
                                          [](const Track& t) { return t.status == TrackStatus::kTriangulated; }));
  }
};

// Initial state with tracks built from the pairwise inliers.
inline ReconstructionState MakeState(const CameraIntrinsics& k, std::vector<std::vector<Vec2>> keypoints,
                                     std::vector<PairMatches> pairs) {
  if (!k.valid()) Fail(ErrorCode::kInvalidArgument, "invalid intrinsics");
  ReconstructionState s;
  s.intrinsics = k;
  s.keypoints = std::move(keypoints);
  s.pairs = std::move(pairs);
  std::vector<int> counts;
  for (const auto& kp : s.keypoints) counts.push_back(static_cast<int>(kp.size()));
  s.tracks = BuildTracks(s.pairs, counts);
  s.track_of_keypoint.resize(s.keypoints.size());
  for (std::size_t i = 0; i < s.keypoints.size(); ++i) s.track_of_keypoint[i].assign(s.keypoints[i].size(), -1);
  for (std::size_t t = 0; t < s.tracks.size(); ++t) {
    if (s.tracks[t].status == TrackStatus::kRejected) continue;
    for (const auto& o : s.tracks[t].observations) s.track_of_keypoint[o.image][o.keypoint] = static_cast<int>(t);
  }
  return s;
}

inline std::vector<Vec2> KeypointPositions(const ImageFeatures& f) {
  std::vector<Vec2> out;
  out.reserve(f.keypoints.size());
  for (const Keypoint& k : f.keypoints) out.push_back({k.x, k.y});
  return out;
}

// Ratio-test matching plus fundamental-matrix RANSAC for every pair i < j.
// Pairs without consensus keep an empty inlier list.
inline std::vector<PairMatches> MatchAllPairs(std::span<const ImageFeatures> features, const PipelineConfig& cfg) {
  const int n = static_cast<int>(features.size());
  std::vector<PairMatches> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.push_back({i, j, 0, {}, Mat3{}});
  ParallelFor(pairs.size(), cfg.threads, [&](std::size_t p) {
    PairMatches& pm = pairs[p];
    const ImageFeatures& a = features[pm.i];
    const ImageFeatures& b = features[pm.j];
    if (a.descriptors.empty() || b.descriptors.empty()) return;
    MatchCounts counts;
    const std::vector<Match> matches = MatchDescriptors(a.descriptors, b.descriptors, cfg.ratio, &counts);
    pm.putative = counts.ratio_passed;
    if (matches.size() < 8) return;
    RansacConfig rc = cfg.ransac;
    rc.rng_seed = cfg.ransac.rng_seed + static_cast<std::uint64_t>(pm.i) * static_cast<std::uint64_t>(n) +
                  static_cast<std::uint64_t>(pm.j);
    try {
      const FundamentalRansacResult r = RansacFundamental(matches, a.keypoints, b.keypoints, rc);
      pm.f = r.f;
      for (int k : r.inliers) pm.inliers.push_back(matches[k]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoConsensus) throw;
    }
  });
  return pairs;
}

struct TwoViewEstimate {
  CameraPose pose;  // right camera; the left one is the identity
  double median_angle_deg = 0.0;
};

inline double Degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

// Relative pose of a verified pair from its fundamental matrix, and the
// median triangulation angle of its inliers in front of both cameras.
inline TwoViewEstimate EstimateTwoView(const ReconstructionState& s, const PairMatches& p) {
  const Mat3 e = EssentialFromFundamental(p.f, s.intrinsics);
  std::vector<Vec2> left, right;
  for (const Match& m : p.inliers) {
    left.push_back(s.intrinsics.normalize(s.keypoints[p.i][m.idx_left]));
    right.push_back(s.intrinsics.normalize(s.keypoints[p.j][m.idx_right]));
  }
  const CheiralityResult chosen = SelectPoseCheirality(DecomposeEssential(e), left, right);
  TwoViewEstimate out;
  out.pose = chosen.pose;
  out.pose.translation = chosen.pose.translation.normalized();

  const Mat34 ml = CameraPose{}.matrix(), mr = out.pose.matrix();
  const Vec3 c2 = out.pose.center();
  std::vector<double> angles;
  for (std::size_t k = 0; k < left.size(); ++k) {
    try {
      const Vec3 x = TriangulateDlt(left[k], right[k], ml, mr);
      if (x[2] > 0 && out.pose.transform(x)[2] > 0) angles.push_back(TriangulationAngle(x, Vec3{}, c2));
    } catch (const Error&) {
    }
  }
  if (angles.empty()) return out;
  auto mid = angles.begin() + static_cast<std::ptrdiff_t>(angles.size() / 2);
  std::nth_element(angles.begin(), mid, angles.end());
  out.median_angle_deg = Degrees(*mid);
  return out;
}

// Highest-inlier pair above the inlier floor whose trial reconstruction has
// a median triangulation angle of at least the configured minimum.
inline std::pair<int, int> SelectInitialPair(const ReconstructionState& s, const PipelineConfig& cfg) {
  std::vector<const PairMatches*> order;
  for (const PairMatches& p : s.pairs)
    if (static_cast<int>(p.inliers.size()) >= cfg.min_init_inliers) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(), [](const PairMatches* a, const PairMatches* b) {
    if (a->inliers.size() != b->inliers.size()) return a->inliers.size() > b->inliers.size();
    return std::pair(a->i, a->j) < std::pair(b->i, b->j);
  });
  for (const PairMatches* p : order) {
    try {
      if (EstimateTwoView(s, *p).median_angle_deg >= cfg.min_triangulation_angle_deg) return {p->i, p->j};
    } catch (const Error&) {
    }
  }
  Fail(ErrorCode::kNoValidPair, "no image pair has enough inliers and baseline");
}

inline double ReprojectionErrorPx(const ReconstructionState& s, int image, int keypoint, const Vec3& x) {
  const CameraPose& pose = s.poses.at(image);
  const Vec3 xc = pose.transform(x);
  if (!(xc[2] > kMinDepth)) return std::numeric_limits<double>::infinity();
  return (ProjectPoint(pose, s.intrinsics, x) - s.keypoints[image][keypoint]).norm();
}

// Multi-view DLT over the track's registered observations, kept only if
// every view sees the point in front within the reprojection bound and some
// pair of rays meets at the minimum angle.
inline std::optional<Vec3> TriangulateTrack(const ReconstructionState& s, const Track& t, const PipelineConfig& cfg) {
  std::vector<Vec2> pts;
  std::vector<Mat34> ms;
  std::vector<int> images;
  for (const auto& o : t.observations) {
    if (!s.is_registered(o.image)) continue;
    pts.push_back(s.intrinsics.normalize(s.keypoints[o.image][o.keypoint]));
    ms.push_back(s.poses.at(o.image).matrix());
    images.push_back(o.image);
  }
  if (pts.size() < 2) return std::nullopt;
  Vec3 x;
  try {
    x = TriangulateMultiView(pts, ms);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (!x.all_finite()) return std::nullopt;
  for (const auto& o : t.observations) {
    if (!s.is_registered(o.image)) continue;
    if (!(ReprojectionErrorPx(s, o.image, o.keypoint, x) <= cfg.max_reproj_px)) return std::nullopt;
  }
  double best = 0.0;
  for (std::size_t a = 0; a < images.size(); ++a)
    for (std::size_t b = a + 1; b < images.size(); ++b) {
      try {
        best = std::max(best, TriangulationAngle(x, s.poses.at(images[a]).center(), s.poses.at(images[b]).center()));
      } catch (const Error&) {
        return std::nullopt;
      }
    }
  if (Degrees(best) < cfg.min_triangulation_angle_deg) return std::nullopt;
  return x;
}

inline void DetachObservation(ReconstructionState& s, int track, int image) {
  auto& obs = s.tracks[track].observations;
  for (auto it = obs.begin(); it != obs.end(); ++it) {
    if (it->image != image) continue;
    s.track_of_keypoint[image][it->keypoint] = -1;
    obs.erase(it);
    return;
  }
}

inline void RejectTrack(ReconstructionState& s, int track) {
  Track& t = s.tracks[track];
  t.status = TrackStatus::kRejected;
  for (const auto& o : t.observations)
    if (s.track_of_keypoint[o.image][o.keypoint] == track) s.track_of_keypoint[o.image][o.keypoint] = -1;
}

// The linear pose from F is biased under a narrow field of view, enough to
// push most points past the reprojection bound. Points in front of both
// cameras are refined jointly with the second pose, then the baseline is
// rescaled to 1.
inline CameraPose RefineTwoView(const ReconstructionState& s, const PairMatches& p, const CameraPose& pose,
                                const PipelineConfig& cfg) {
  BAProblem problem;
  problem.intrinsics = s.intrinsics;
  problem.poses = {CameraPose{}, pose};
  const Mat34 ml = CameraPose{}.matrix(), mr = pose.matrix();
  for (const Match& m : p.inliers) {
    const Vec2 a = s.keypoints[p.i][m.idx_left], b = s.keypoints[p.j][m.idx_right];
    Vec3 x;
    try {
      x = TriangulateDlt(s.intrinsics.normalize(a), s.intrinsics.normalize(b), ml, mr);
    } catch (const Error&) {
      continue;
    }
    if (!(x[2] > kMinDepth && pose.transform(x)[2] > kMinDepth)) continue;
    const int k = static_cast<int>(problem.points.size());
    problem.points.push_back(x);
    problem.observations.push_back({0, k, a});
    problem.observations.push_back({1, k, b});
  }
  if (problem.points.size() < 8) return pose;
  BAOptions opts;
  opts.max_iterations = cfg.ba_max_iterations;
  opts.tolerance = cfg.ba_tolerance;
  opts.threads = cfg.threads;
  Optimize(problem, opts);
  CameraPose out = problem.poses[1];
  const double scale = out.translation.norm();
  if (!(scale > 0) || !std::isfinite(scale)) return pose;
  out.translation = out.translation / scale;
  return out;
}

// Two-view initialization: first camera at the identity, second at unit
// baseline; tracks seen by both are triangulated or rejected.
inline void Bootstrap(ReconstructionState& s, int i, int j, const PipelineConfig& cfg) {
  const PairMatches* pair = nullptr;
  for (const PairMatches& p : s.pairs)
    if (p.i == std::min(i, j) && p.j == std::max(i, j)) pair = &p;
  if (!pair || pair->inliers.size() < 8) Fail(ErrorCode::kNoValidPair, "bootstrap pair has no verified matches");
  const TwoViewEstimate est = EstimateTwoView(s, *pair);
  s.poses.clear();
  s.registered.clear();
  s.poses[pair->i] = CameraPose{};
  s.poses[pair->j] = RefineTwoView(s, *pair, est.pose, cfg);
  s.registered = {pair->i, pair->j};
  for (std::size_t t = 0; t < s.tracks.size(); ++t) {
    Track& track = s.tracks[t];
    if (track.status == TrackStatus::kRejected || !track.find(pair->i) || !track.find(pair->j)) continue;
    if (const auto x = TriangulateTrack(s, track, cfg)) {
      track.point = *x;
      track.status = TrackStatus::kTriangulated;
    } else {
      RejectTrack(s, static_cast<int>(t));
    }
  }
}

// Number of keypoints of `image` lying on triangulated tracks.
inline int CountCorrespondences(const ReconstructionState& s, int image) {
  int n = 0;
  for (int t : s.track_of_keypoint[image])
    if (t >= 0 && s.tracks[t].status == TrackStatus::kTriangulated) ++n;
  return n;
}

inline int SelectNextView(const ReconstructionState& s, const PipelineConfig& cfg) {
  int best = -1, best_count = -1;
  for (int i = 0; i < s.num_images(); ++i) {
    if (s.is_registered(i) || std::find(s.failed.begin(), s.failed.end(), i) != s.failed.end()) continue;
    const int c = CountCorrespondences(s, i);
    if (c >= cfg.min_pnp_correspondences && c > best_count) {
      best = i;
      best_count = c;
    }
  }
  if (best < 0) Fail(ErrorCode::kNoRegistrableView, "no unregistered view has enough 2D-3D correspondences");
  return best;
}

struct ViewRegistration {
  int image = 0;
  int inliers = 0;
  double mean_reproj_px = 0.0;
};

// Resection of `image` against the triangulated tracks it observes, then
// pruning of its outlying observations and triangulation of newly covered
// tracks. On PnP failure the view is recorded as failed and nothing else
// changes.
inline std::optional<ViewRegistration> RegisterView(ReconstructionState& s, int image, const PipelineConfig& cfg) {
  std::vector<Correspondence2D3D> corrs;
  for (std::size_t kp = 0; kp < s.keypoints[image].size(); ++kp) {
    const int t = s.track_of_keypoint[image][kp];
    if (t >= 0 && s.tracks[t].status == TrackStatus::kTriangulated)
      corrs.push_back({s.tracks[t].point, s.keypoints[image][kp]});
  }
  PnpConfig pc;
  pc.ransac = cfg.ransac;
  pc.ransac.inlier_threshold_px = cfg.max_reproj_px;
  pc.ransac.min_inliers = cfg.min_pnp_correspondences;
  pc.ransac.rng_seed = cfg.ransac.rng_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(image + 1);
  PnpResult pnp;
  try {
    pnp = PnpRansac(corrs, s.intrinsics, pc);
  } catch (const Error&) {
    s.failed.push_back(image);
    return std::nullopt;
  }
  s.poses[image] = pnp.pose;
  s.registered.push_back(image);

  ViewRegistration out{image, static_cast<int>(pnp.inliers.size()), 0.0};
  for (int k : pnp.inliers) out.mean_reproj_px += ReprojectionError(pnp.pose, s.intrinsics, corrs[k]);
  if (!pnp.inliers.empty()) out.mean_reproj_px /= static_cast<double>(pnp.inliers.size());

  for (std::size_t t = 0; t < s.tracks.size(); ++t) {
    Track& track = s.tracks[t];
    const TrackObservation* o = track.find(image);
    if (!o || track.status == TrackStatus::kRejected) continue;
    if (track.status == TrackStatus::kTriangulated) {
      if (!(ReprojectionErrorPx(s, image, o->keypoint, track.point) <= cfg.max_reproj_px))
        DetachObservation(s, static_cast<int>(t), image);
      continue;
    }
    if (const auto x = TriangulateTrack(s, track, cfg)) {
      track.point = *x;
      track.status = TrackStatus::kTriangulated;
    }
  }
  return out;
}

// Drops observations by registered views that exceed the reprojection bound
// and rejects triangulated tracks left with fewer than two of them.
inline int RefilterTracks(ReconstructionState& s, const PipelineConfig& cfg) {
  int dropped = 0;
  for (std::size_t t = 0; t < s.tracks.size(); ++t) {
    Track& track = s.tracks[t];
    if (track.status != TrackStatus::kTriangulated) continue;
    std::vector<int> bad;
    int good = 0;
    for (const auto& o : track.observations) {
      if (!s.is_registered(o.image)) continue;
      if (ReprojectionErrorPx(s, o.image, o.keypoint, track.point) <= cfg.max_reproj_px)
        ++good;
      else
        bad.push_back(o.image);
    }
    for (int image : bad) DetachObservation(s, static_cast<int>(t), image);
    dropped += static_cast<int>(bad.size());
    if (good < 2) RejectTrack(s, static_cast<int>(t));
  }
  return dropped;
}

struct BundleAdjustmentRun {
  std::vector<int> images;  // image index of each BA pose, gauge view first
  BAReport report;
};

// Joint refinement of every registered pose and triangulated track.
inline std::optional<BundleAdjustmentRun> AdjustBundle(ReconstructionState& s, const PipelineConfig& cfg) {
  BAProblem problem;
  problem.intrinsics = s.intrinsics;
  std::map<int, int> pose_index;
  for (int image : s.registered) {
    pose_index[image] = static_cast<int>(problem.poses.size());
    problem.poses.push_back(s.poses.at(image));
  }
  std::vector<int> track_ids;
  for (std::size_t t = 0; t < s.tracks.size(); ++t) {
    const Track& track = s.tracks[t];
    if (track.status != TrackStatus::kTriangulated) continue;
    const int point = static_cast<int>(problem.points.size());
    for (const auto& o : track.observations)
      if (s.is_registered(o.image)) problem.observations.push_back({pose_index[o.image], point, s.keypoints[o.image][o.keypoint]});
    problem.points.push_back(track.point);
    track_ids.push_back(static_cast<int>(t));
  }
  if (problem.points.empty()) return std::nullopt;

  BAOptions opts;
  opts.max_iterations = cfg.ba_max_iterations;
  opts.tolerance = cfg.ba_tolerance;
  opts.threads = cfg.threads;
  BundleAdjustmentRun run{s.registered, Optimize(problem, opts)};
  for (std::size_t p = 1; p < s.registered.size(); ++p) s.poses[s.registered[p]] = problem.poses[p];
  for (std::size_t k = 0; k < track_ids.size(); ++k) s.tracks[track_ids[k]].point = problem.points[k];
  return run;
}

struct ViewProgress {
  int image = 0;
  int inliers = 0;
  double mean_reproj_px = 0.0;
  int tracks = 0;  // triangulated tracks after this view
};

inline std::string FormatProgress(const ViewProgress& p) {
  return fmt::format("view={} inliers={} mean_reproj_px={:.4f} tracks={}", p.image, p.inliers, p.mean_reproj_px,
                     p.tracks);
}

using ProgressCallback = std::function<void(const ViewProgress&)>;

struct SfmResult {
  ReconstructionState state;
  std::vector<BundleAdjustmentRun> ba_runs;  // local runs in order, final run last
};

inline double MeanViewError(const ReconstructionState& s, int image) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t kp = 0; kp < s.keypoints[image].size(); ++kp) {
    const int t = s.track_of_keypoint[image][kp];
    if (t < 0 || s.tracks[t].status != TrackStatus::kTriangulated) continue;
    sum += ReprojectionErrorPx(s, image, static_cast<int>(kp), s.tracks[t].point);
    ++n;
  }
  return n ? sum / n : 0.0;
}

// Bootstrap, greedy registration with periodic bundle adjustment, and a
// final bundle adjustment over everything registered.
inline SfmResult Reconstruct(ReconstructionState state, const PipelineConfig& cfg,
                             const ProgressCallback& progress = {}) {
  ValidateConfig(cfg);
  if (state.num_images() < 2) Fail(ErrorCode::kInvalidArgument, "reconstruction needs >= 2 images");
  SfmResult result;
  ReconstructionState& s = state;

  const auto [a, b] = SelectInitialPair(s, cfg);
  Bootstrap(s, a, b, cfg);
  if (progress) {
    int pair_inliers = 0;
    for (const auto& p : s.pairs)
      if (p.i == a && p.j == b) pair_inliers = static_cast<int>(p.inliers.size());
    for (int image : {a, b}) progress({image, pair_inliers, MeanViewError(s, image), s.triangulated_count()});
  }

  int since_ba = 0;
  while (true) {
    int next;
    try {
      next = SelectNextView(s, cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoRegistrableView) throw;
      break;
    }
    const auto reg = RegisterView(s, next, cfg);
    if (!reg) continue;
    if (++since_ba >= cfg.local_ba_interval) {
      if (auto run = AdjustBundle(s, cfg)) result.ba_runs.push_back(std::move(*run));
      RefilterTracks(s, cfg);
      since_ba = 0;
    }
    if (progress) progress({reg->image, reg->inliers, reg->mean_reproj_px, s.triangulated_count()});
  }
  if (auto run = AdjustBundle(s, cfg)) result.ba_runs.push_back(std::move(*run));
  RefilterTracks(s, cfg);
  result.state = std::move(state);
  return result;
}

inline std::vector<float> SampleIntensities(const GrayImage& img, std::span<const Vec2> points) {
  std::vector<float> out;
  out.reserve(points.size());
  for (const Vec2& p : points) out.push_back(static_cast<float>(img.sample(p[0], p[1])));
  return out;
}

struct FeatureRun {
  std::vector<ImageFeatures> features;
  std::vector<std::vector<float>> intensities;
};

inline FeatureRun DetectAll(std::span<const GrayImage> images, const PipelineConfig& cfg) {
  FeatureRun run;
  run.features.resize(images.size());
  run.intensities.resize(images.size());
  ParallelFor(images.size(), cfg.threads, [&](std::size_t i) {
    run.features[i] = DetectFeatures(images[i], cfg.sift);
    run.intensities[i] = SampleIntensities(images[i], KeypointPositions(run.features[i]));
  });
  return run;
}

inline SfmResult RunIncrementalSfm(std::span<const GrayImage> images, const CameraIntrinsics& k,
                                   const PipelineConfig& cfg, const ProgressCallback& progress = {}) {
  ValidateConfig(cfg);
  if (images.size() < 2) Fail(ErrorCode::kInvalidArgument, "reconstruction needs >= 2 images");
  FeatureRun run = DetectAll(images, cfg);
  std::vector<std::vector<Vec2>> positions;
  for (const auto& f : run.features) positions.push_back(KeypointPositions(f));
  ReconstructionState s = MakeState(k, std::move(positions), MatchAllPairs(run.features, cfg));
  s.intensities = std::move(run.intensities);
  return Reconstruct(std::move(s), cfg, progress);
}

}  // namespace sfm
