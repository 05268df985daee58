#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"
#include "sfmkit/core/numerics.hpp"
#include "sfmkit/geometry/camera.hpp"
#include "sfmkit/matching/matching.hpp"

namespace sfm {

struct Correspondence2D3D {
  Vec3 point3d;
  Vec2 point2d;
};

namespace detail {

// Similarity for 3-D points: centroid to origin, mean distance sqrt(3).
inline Matrix<4, 4> Normalization3D(std::span<const Correspondence2D3D> corrs) {
  Vec3 mean;
  for (const auto& c : corrs) mean += c.point3d;
  mean /= static_cast<double>(corrs.size());
  double dist = 0.0;
  for (const auto& c : corrs) dist += (c.point3d - mean).norm();
  dist /= static_cast<double>(corrs.size());
  if (!(dist > 1e-12 * (1.0 + mean.norm()))) Fail(ErrorCode::kCoplanarDegenerate, "all 3D points coincide");
  const double s = std::sqrt(3.0) / dist;
  Matrix<4, 4> u = Matrix<4, 4>::Identity();
  for (int i = 0; i < 3; ++i) {
    u(i, i) = s;
    u(i, 3) = -s * mean[i];
  }
  return u;
}

}  // namespace detail

// Homogeneous DLT for the 3x4 projection matrix, two equations per
// correspondence, with both point sets pre-normalized. Unit Frobenius norm.
inline Mat34 DltProjectionMatrix(std::span<const Correspondence2D3D> corrs) {
  if (corrs.size() < 6) Fail(ErrorCode::kInsufficientPoints, "DLT needs >= 6 correspondences");
  std::vector<Vec2> pts2d;
  pts2d.reserve(corrs.size());
  for (const auto& c : corrs) pts2d.push_back(c.point2d);
  NormalizationTransform t2;
  try {
    t2 = ComputeNormalization(pts2d);
  } catch (const Error&) {
    Fail(ErrorCode::kCoplanarDegenerate, "all image points coincide");
  }
  const Matrix<4, 4> u3 = detail::Normalization3D(corrs);

  Mat a(static_cast<int>(2 * corrs.size()), 12);
  for (std::size_t k = 0; k < corrs.size(); ++k) {
    const Vec4 p = u3 * Homogeneous(corrs[k].point3d);
    const Vec2 x = t2.apply(corrs[k].point2d);
    const int r0 = static_cast<int>(2 * k), r1 = r0 + 1;
    for (int j = 0; j < 4; ++j) {
      // [x]x M P = 0, first two rows: m = (m1; m2; m3) row-major.
      a(r0, 4 + j) = -p[j];
      a(r0, 8 + j) = x[1] * p[j];
      a(r1, j) = p[j];
      a(r1, 8 + j) = -x[0] * p[j];
    }
  }
  const NullVector nv = SmallestSingularVector(a);
  const auto& s = nv.singular_values;
  if (nv.ambiguous || !(s[10] > 1e-10 * s[0]))
    Fail(ErrorCode::kCoplanarDegenerate, "DLT nullspace is not one-dimensional");

  Mat34 mn;
  for (int i = 0; i < 12; ++i) mn[i] = nv.vector[i];
  const Mat34 m = Inverse(t2.t) * mn * u3;
  return m / m.norm();
}

struct ProjectionDecomposition {
  CameraIntrinsics intrinsics;
  CameraPose pose;
  Vec3 center;
};

// M = [H | h] -> K, R via RQ of H, camera center -H^-1 h.
inline ProjectionDecomposition DecomposeProjection(Mat34 m) {
  Mat3 h = m.block<3, 3>(0, 0);
  const double det = Determinant(h);
  if (!(std::abs(det) > 1e-12 * std::pow(std::max(h.norm(), 1e-300), 3)))
    Fail(ErrorCode::kSingularMatrix, "left 3x3 block of M is singular");
  if (det < 0) {
    m = -m;
    h = -h;
  }
  const RqResult rq = RqDecompose(h, 0.0);
  ProjectionDecomposition out;
  Mat3 k = rq.k / rq.k(2, 2);
  out.intrinsics = CameraIntrinsics::FromMatrix(k);
  out.center = -(Inverse(h) * m.col(3));
  out.pose = CameraPose::FromCenter(rq.r, out.center);
  return out;
}

struct PnpConfig {
  RansacConfig ransac{2000, 4.0, 0.999, 0, 6};
  int refine_iterations = 20;
};

struct PnpResult {
  CameraPose pose;
  std::vector<int> inliers;  // sorted
  int iterations = 0;
  double initial_cost = 0.0;  // inlier squared reprojection error before refinement
  double final_cost = 0.0;
};

inline double ReprojectionError(const CameraPose& pose, const CameraIntrinsics& k, const Correspondence2D3D& c) {
  const Vec3 x = pose.transform(c.point3d);
  if (!(x[2] > kMinDepth)) return std::numeric_limits<double>::infinity();
  const Vec2 px{k.fx * x[0] / x[2] + k.skew * x[1] / x[2] + k.cx, k.fy * x[1] / x[2] + k.cy};
  return (px - c.point2d).norm();
}

namespace detail {

inline double PoseCost(const CameraPose& pose, const CameraIntrinsics& k, std::span<const Correspondence2D3D> corrs,
                       std::span<const int> subset) {
  double cost = 0.0;
  for (int i : subset) {
    const double e = ReprojectionError(pose, k, corrs[i]);
    if (!std::isfinite(e)) return std::numeric_limits<double>::infinity();
    cost += e * e;
  }
  return cost;
}

}  // namespace detail

// Levenberg-Marquardt over (axis-angle, translation) minimizing squared
// reprojection error on `subset`. Only cost-decreasing steps are accepted.
inline CameraPose RefinePose(const CameraPose& initial, const CameraIntrinsics& k,
                             std::span<const Correspondence2D3D> corrs, std::span<const int> subset,
                             int max_iterations, double* initial_cost = nullptr, double* final_cost = nullptr) {
  Vec3 w = RotationLog(initial.rotation);
  Vec3 t = initial.translation;
  CameraPose pose = initial;
  double cost = detail::PoseCost(pose, k, corrs, subset);
  if (initial_cost) *initial_cost = cost;
  double lambda = 1e-3;
  for (int it = 0; it < max_iterations && std::isfinite(cost); ++it) {
    Mat6 jtj;
    Matrix<6, 1> jtr;
    const Mat3 r = RotationExp(w);
    for (int i : subset) {
      Vec2 px;
      PoseJacobian j;
      if (!ProjectWithJacobians(r, w, t, k, corrs[i].point3d, px, &j, nullptr)) continue;
      const Vec2 res = px - corrs[i].point2d;
      jtj += j.transpose() * j;
      jtr += j.transpose() * res;
    }
    if (jtr.max_abs() < 1e-12) break;
    bool accepted = false;
    while (lambda < 1e12) {
      Mat a(jtj);
      std::vector<double> b(6);
      for (int i = 0; i < 6; ++i) {
        a(i, i) += lambda * std::max(jtj(i, i), 1e-12);
        b[i] = -jtr[i];
      }
      if (CholeskySolve(a, b)) {
        const Vec3 w_new = w + Vec3{b[0], b[1], b[2]};
        const Vec3 t_new = t + Vec3{b[3], b[4], b[5]};
        const CameraPose candidate{RotationExp(w_new), t_new};
        const double new_cost = detail::PoseCost(candidate, k, corrs, subset);
        if (new_cost < cost) {
          const double rel = (cost - new_cost) / std::max(cost, 1e-300);
          w = RotationLog(candidate.rotation);
          t = t_new;
          pose = candidate;
          cost = new_cost;
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          if (rel < 1e-12) it = max_iterations;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  if (final_cost) *final_cost = cost;
  return pose;
}

// Pose from a DLT projection with the intrinsics replaced by the known ones.
inline CameraPose PoseFromDlt(const Mat34& m) {
  const ProjectionDecomposition d = DecomposeProjection(m);
  return CameraPose::FromCenter(NearestRotation(d.pose.rotation), d.center);
}

inline std::vector<int> PnpInliers(const CameraPose& pose, const CameraIntrinsics& k,
                                   std::span<const Correspondence2D3D> corrs, double threshold) {
  std::vector<int> inliers;
  for (std::size_t i = 0; i < corrs.size(); ++i)
    if (ReprojectionError(pose, k, corrs[i]) < threshold) inliers.push_back(static_cast<int>(i));
  return inliers;
}

// RANSAC over 6-point DLT samples followed by LM refinement on the inliers.
inline PnpResult PnpRansac(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k,
                           const PnpConfig& cfg = {}) {
  ValidateRansacConfig(cfg.ransac);
  if (!k.valid()) Fail(ErrorCode::kInvalidArgument, "invalid intrinsics");
  if (corrs.size() < 6) Fail(ErrorCode::kInsufficientPoints, "PnP needs >= 6 correspondences");
  const int n = static_cast<int>(corrs.size());
  const double threshold = cfg.ransac.inlier_threshold_px;

  IndexSampler sampler(corrs.size(), cfg.ransac.rng_seed);
  PnpResult best;
  int cap = cfg.ransac.max_iterations;
  int iter = 0;
  std::vector<Correspondence2D3D> sample(6);
  for (; iter < cap; ++iter) {
    const int* idx = sampler.sample(6);
    for (int i = 0; i < 6; ++i) sample[i] = corrs[idx[i]];
    CameraPose pose;
    try {
      pose = PoseFromDlt(DltProjectionMatrix(sample));
    } catch (const Error&) {
      continue;
    }
    std::vector<int> inliers = PnpInliers(pose, k, corrs, threshold);
    if (inliers.size() > best.inliers.size()) {
      // Local optimization: the 6-point DLT is noisy, so refit on the
      // hypothesis's inliers and keep the refit if it scores better.
      if (inliers.size() >= 6) {
        const CameraPose refit = RefinePose(pose, k, corrs, inliers, 5);
        std::vector<int> more = PnpInliers(refit, k, corrs, threshold);
        if (more.size() > inliers.size()) {
          pose = refit;
          inliers = std::move(more);
        }
      }
      best.pose = pose;
      best.inliers = std::move(inliers);
      cap = std::min(cap, AdaptiveIterations(static_cast<int>(best.inliers.size()), n, 6, cfg.ransac.confidence,
                                             cfg.ransac.max_iterations));
    }
  }
  best.iterations = iter;
  const int min_inliers = std::max(cfg.ransac.min_inliers, 6);
  if (static_cast<int>(best.inliers.size()) < min_inliers)
    Fail(ErrorCode::kNoConsensus, "PnP found " + std::to_string(best.inliers.size()) + " inliers");

  best.pose = RefinePose(best.pose, k, corrs, best.inliers, cfg.refine_iterations, &best.initial_cost,
                         &best.final_cost);
  std::vector<int> inliers = PnpInliers(best.pose, k, corrs, threshold);
  if (inliers.size() >= best.inliers.size()) best.inliers = std::move(inliers);
  return best;
}

}  // namespace sfm
