#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"
#include "sfmkit/core/numerics.hpp"
#include "sfmkit/features/sift.hpp"

namespace sfm {

struct Match {
  int idx_left = 0;
  int idx_right = 0;
  double distance = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchCounts {
  int ratio_passed = 0;  // one-directional ratio-test survivors
  int mutual = 0;        // after the cross-check
};

// Eight independent partial sums so the loop vectorizes without reassociation
// flags; the summation order is fixed, so results stay deterministic.
inline float SquaredDistance128(const float* a, const float* b) {
  float lane[8] = {};
  for (int k = 0; k < 128; k += 8)
    for (int l = 0; l < 8; ++l) {
      const float d = a[k + l] - b[k + l];
      lane[l] += d * d;
    }
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

// Exhaustive Euclidean nearest neighbours with Lowe's ratio test and a
// mutual-best cross-check. Output is ordered by idx_left.
inline std::vector<Match> MatchDescriptors(std::span<const Descriptor> left, std::span<const Descriptor> right,
                                           double ratio = 0.75, MatchCounts* counts = nullptr) {
  if (left.empty() || right.empty()) Fail(ErrorCode::kEmptyInput, "descriptor list is empty");
  if (!(ratio > 0.0 && ratio <= 1.0)) Fail(ErrorCode::kInvalidArgument, "ratio must be in (0, 1]");
  const std::size_t n = left.size(), m = right.size();
  constexpr float kInf = std::numeric_limits<float>::infinity();

  std::vector<int> best_left_for_right(m, -1);
  std::vector<float> best_dist_for_right(m, kInf);
  std::vector<int> best(n, -1);
  std::vector<float> d1(n, kInf), d2(n, kInf);

  for (std::size_t i = 0; i < n; ++i) {
    const float* a = left[i].values.data();
    for (std::size_t j = 0; j < m; ++j) {
      const float* b = right[j].values.data();
      const float s = SquaredDistance128(a, b);
      if (s < d1[i]) {
        d2[i] = d1[i];
        d1[i] = s;
        best[i] = static_cast<int>(j);
      } else if (s < d2[i]) {
        d2[i] = s;
      }
      if (s < best_dist_for_right[j]) {
        best_dist_for_right[j] = s;
        best_left_for_right[j] = static_cast<int>(i);
      }
    }
  }

  std::vector<Match> out;
  MatchCounts local;
  for (std::size_t i = 0; i < n; ++i) {
    const double dist1 = std::sqrt(static_cast<double>(d1[i]));
    const double dist2 = std::sqrt(static_cast<double>(d2[i]));
    if (!(dist1 < ratio * dist2)) continue;
    ++local.ratio_passed;
    if (best_left_for_right[best[i]] != static_cast<int>(i)) continue;
    out.push_back({static_cast<int>(i), best[i], dist1});
  }
  local.mutual = static_cast<int>(out.size());
  if (counts) *counts = local;
  return out;
}

struct NormalizationTransform {
  Mat3 t = Mat3::Identity();
  double scale = 1.0;
  Vec2 centroid;

  Vec2 apply(const Vec2& p) const { return {scale * (p[0] - centroid[0]), scale * (p[1] - centroid[1])}; }
};

// Similarity moving the centroid to the origin with mean distance sqrt(2).
inline NormalizationTransform ComputeNormalization(std::span<const Vec2> points) {
  if (points.size() < 2) Fail(ErrorCode::kDegeneratePoints, "need at least two points");
  Vec2 mean;
  for (const Vec2& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double mean_dist = 0.0;
  for (const Vec2& p : points) mean_dist += (p - mean).norm();
  mean_dist /= static_cast<double>(points.size());
  if (!(mean_dist > 1e-12 * (1.0 + mean.norm()))) Fail(ErrorCode::kDegeneratePoints, "all points coincide");
  NormalizationTransform out;
  out.scale = std::sqrt(2.0) / mean_dist;
  out.centroid = mean;
  out.t = {out.scale, 0.0, -out.scale * mean[0],  //
           0.0, out.scale, -out.scale * mean[1],  //
           0.0, 0.0, 1.0};
  return out;
}

// Unit-Frobenius rank-2 matrix with x_R^T F x_L = 0.
inline Mat3 EstimateFundamental8pt(std::span<const Vec2> left, std::span<const Vec2> right,
                                   double degeneracy_tol = 1e-10) {
  if (left.size() != right.size()) Fail(ErrorCode::kInvalidArgument, "point lists differ in length");
  if (left.size() < 8) Fail(ErrorCode::kInsufficientPoints, "8-point needs >= 8 correspondences");
  const NormalizationTransform tl = ComputeNormalization(left);
  const NormalizationTransform tr = ComputeNormalization(right);

  // Row of G: coefficients of F (row-major) in x_R^T F x_L.
  Mat g(static_cast<int>(left.size()), 9);
  for (int k = 0; k < g.rows(); ++k) {
    const Vec2 l = tl.apply(left[k]);
    const Vec2 r = tr.apply(right[k]);
    const double lh[3] = {l[0], l[1], 1.0};
    const double rh[3] = {r[0], r[1], 1.0};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) g(k, 3 * i + j) = rh[i] * lh[j];
  }
  const NullVector nv = SmallestSingularVector(g);
  const auto& s = nv.singular_values;
  if (!(s[7] > degeneracy_tol * s[0])) Fail(ErrorCode::kDegenerateConfiguration, "8-point nullspace is not one-dimensional");

  Mat3 f_norm;
  for (int i = 0; i < 9; ++i) f_norm[i] = nv.vector[i];
  Svd3 d = ComputeSvd(f_norm);
  const Mat3 sigma{d.s[0], 0, 0, 0, d.s[1], 0, 0, 0, 0};
  f_norm = d.u * sigma * d.v.transpose();

  Mat3 f = tr.t.transpose() * f_norm * tl.t;
  // Re-project onto rank 2 after denormalization to clean round-off.
  d = ComputeSvd(f);
  const Mat3 sigma2{d.s[0], 0, 0, 0, d.s[1], 0, 0, 0, 0};
  f = d.u * sigma2 * d.v.transpose();
  return f / f.norm();
}

// First-order geometric distance (pixels) of a correspondence to F.
inline double SampsonDistance(const Mat3& f, const Vec2& left, const Vec2& right) {
  const Vec3 xl = Homogeneous(left), xr = Homogeneous(right);
  const Vec3 fx = f * xl;
  const Vec3 ftx = f.transpose() * xr;
  const double num = Dot(xr, fx);
  const double den = fx[0] * fx[0] + fx[1] * fx[1] + ftx[0] * ftx[0] + ftx[1] * ftx[1];
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return std::abs(num) / std::sqrt(den);
}

struct RansacConfig {
  int max_iterations = 2000;
  double inlier_threshold_px = 1.5;
  double confidence = 0.999;
  std::uint64_t rng_seed = 0;
  int min_inliers = 15;
};

inline void ValidateRansacConfig(const RansacConfig& cfg) {
  if (!(cfg.inlier_threshold_px > 0) || !(cfg.confidence > 0 && cfg.confidence < 1) || cfg.max_iterations < 1)
    Fail(ErrorCode::kInvalidArgument, "invalid RANSAC configuration");
}

// Draws k distinct indices from [0, n) by a partial Fisher-Yates shuffle.
// Uses raw engine output so sequences are identical across standard libraries.
class IndexSampler {
 public:
  IndexSampler(std::size_t n, std::uint64_t seed) : pool_(n), rng_(seed) {
    std::iota(pool_.begin(), pool_.end(), 0);
  }

  const int* sample(int k) {
    const std::size_t n = pool_.size();
    for (int i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_() % (n - i));
      std::swap(pool_[i], pool_[j]);
    }
    return pool_.data();
  }

 private:
  std::vector<int> pool_;
  std::mt19937_64 rng_;
};

inline int AdaptiveIterations(int inliers, int total, int sample_size, double confidence, int cap) {
  const double w = static_cast<double>(inliers) / total;
  const double p_good = std::pow(w, sample_size);
  if (p_good >= 1.0) return 1;
  if (p_good <= 0.0) return cap;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - p_good);
  if (!std::isfinite(n) || n > cap) return cap;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

struct FundamentalRansacResult {
  Mat3 f;
  std::vector<int> inliers;  // sorted indices into the correspondence list
  int iterations = 0;
};

inline std::vector<int> FundamentalInliers(const Mat3& f, std::span<const Vec2> left, std::span<const Vec2> right,
                                           double threshold) {
  std::vector<int> inliers;
  for (std::size_t k = 0; k < left.size(); ++k)
    if (SampsonDistance(f, left[k], right[k]) < threshold) inliers.push_back(static_cast<int>(k));
  return inliers;
}

inline FundamentalRansacResult RansacFundamental(std::span<const Vec2> left, std::span<const Vec2> right,
                                                 const RansacConfig& cfg = {}) {
  ValidateRansacConfig(cfg);
  if (left.size() != right.size()) Fail(ErrorCode::kInvalidArgument, "point lists differ in length");
  if (left.size() < 8) Fail(ErrorCode::kInsufficientPoints, "RANSAC needs >= 8 matches");
  const int n = static_cast<int>(left.size());

  IndexSampler sampler(left.size(), cfg.rng_seed);
  FundamentalRansacResult best;
  int cap = cfg.max_iterations;
  int iter = 0;
  std::vector<Vec2> sl(8), sr(8);
  for (; iter < cap; ++iter) {
    const int* idx = sampler.sample(8);
    for (int k = 0; k < 8; ++k) {
      sl[k] = left[idx[k]];
      sr[k] = right[idx[k]];
    }
    Mat3 f;
    try {
      f = EstimateFundamental8pt(sl, sr);
    } catch (const Error&) {
      continue;
    }
    std::vector<int> inliers = FundamentalInliers(f, left, right, cfg.inlier_threshold_px);
    if (inliers.size() > best.inliers.size()) {
      best.f = f;
      best.inliers = std::move(inliers);
      cap = std::min(cap, AdaptiveIterations(static_cast<int>(best.inliers.size()), n, 8, cfg.confidence,
                                             cfg.max_iterations));
    }
  }
  best.iterations = iter;
  if (static_cast<int>(best.inliers.size()) < cfg.min_inliers)
    Fail(ErrorCode::kNoConsensus, "RANSAC found " + std::to_string(best.inliers.size()) + " inliers");

  // Consensus refit on every inlier; kept only if it does not lose support.
  std::vector<Vec2> il, ir;
  for (int k : best.inliers) {
    il.push_back(left[k]);
    ir.push_back(right[k]);
  }
  try {
    const Mat3 refit = EstimateFundamental8pt(il, ir);
    std::vector<int> inliers = FundamentalInliers(refit, left, right, cfg.inlier_threshold_px);
    if (inliers.size() >= best.inliers.size()) {
      best.f = refit;
      best.inliers = std::move(inliers);
    }
  } catch (const Error&) {
  }
  return best;
}

inline FundamentalRansacResult RansacFundamental(std::span<const Match> matches, std::span<const Keypoint> kps_left,
                                                 std::span<const Keypoint> kps_right, const RansacConfig& cfg = {}) {
  std::vector<Vec2> left, right;
  left.reserve(matches.size());
  right.reserve(matches.size());
  for (const Match& m : matches) {
    left.push_back({kps_left[m.idx_left].x, kps_left[m.idx_left].y});
    right.push_back({kps_right[m.idx_right].x, kps_right[m.idx_right].y});
  }
  return RansacFundamental(left, right, cfg);
}

}  // namespace sfm
