#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"
#include "sfmkit/core/numerics.hpp"
#include "sfmkit/geometry/camera.hpp"

namespace sfm {

inline Mat3 ProjectToEssential(const Mat3& e) {
  const Svd3 d = ComputeSvd(e);
  const double s = 0.5 * (d.s[0] + d.s[1]);
  if (!(s > 0)) Fail(ErrorCode::kInvalidArgument, "essential matrix has rank < 2");
  const Mat3 sigma{s, 0, 0, 0, s, 0, 0, 0, 0};
  const Mat3 out = d.u * sigma * d.v.transpose();
  return out / out.norm();
}

// E = K^T F K projected onto the essential manifold (equal non-zero singular
// values) and scaled to unit Frobenius norm.
inline Mat3 EssentialFromFundamental(const Mat3& f, const CameraIntrinsics& k) {
  if (!k.valid()) Fail(ErrorCode::kInvalidArgument, "invalid intrinsics");
  const Mat3 km = k.matrix();
  return ProjectToEssential(km.transpose() * f * km);
}

struct PoseCandidate {
  Mat3 rotation;
  Vec3 translation;  // unit norm
};

// The four (R, t) factorizations of E = [t]x R.
inline std::array<PoseCandidate, 4> DecomposeEssential(const Mat3& e) {
  Svd3 d = ComputeSvd(e);
  Mat3 u = d.u, v = d.v;
  if (Determinant(u) < 0) u = -u;
  if (Determinant(v) < 0) v = -v;
  const Mat3 w{0, -1, 0, 1, 0, 0, 0, 0, 1};
  const Mat3 ra = u * w * v.transpose();
  const Mat3 rb = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();
  return {PoseCandidate{ra, t}, PoseCandidate{ra, -t}, PoseCandidate{rb, t}, PoseCandidate{rb, -t}};
}

namespace detail {

inline Vec4 CameraCenterHomogeneous(const Mat34& m) {
  const NullVector nv = SmallestSingularVector(Mat(m));
  return {nv.vector[0], nv.vector[1], nv.vector[2], nv.vector[3]};
}

}  // namespace detail

// Linear triangulation from any number of views: stacks [p]x M for each
// observation and takes the smallest right-singular vector.
inline Vec3 TriangulateMultiView(std::span<const Vec2> points, std::span<const Mat34> projections) {
  if (points.size() != projections.size() || points.size() < 2)
    Fail(ErrorCode::kInvalidArgument, "triangulation needs >= 2 matching observations");
  Mat l(static_cast<int>(3 * points.size()), 4);
  for (std::size_t v = 0; v < points.size(); ++v) {
    const Mat3 px = Skew(Homogeneous(points[v]));
    const Mat34& m = projections[v];
    // Rows are scaled by the projection norm so views contribute evenly.
    const double scale = 1.0 / m.norm();
    const Matrix<3, 4> rows = px * m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) l(static_cast<int>(3 * v) + r, c) = scale * rows(r, c);
  }
  const NullVector nv = SmallestSingularVector(l);
  const Vec4 p{nv.vector[0], nv.vector[1], nv.vector[2], nv.vector[3]};
  return FromHomogeneous(p);
}

inline Vec3 TriangulateDlt(const Vec2& p_left, const Vec2& p_right, const Mat34& m_left, const Mat34& m_right) {
  const Vec4 cl = detail::CameraCenterHomogeneous(m_left);
  const Vec4 cr = detail::CameraCenterHomogeneous(m_right);
  if (1.0 - std::abs(Dot(cl, cr)) <= 1e-12) Fail(ErrorCode::kZeroBaseline, "camera centers coincide");
  const std::array<Vec2, 2> pts{p_left, p_right};
  const std::array<Mat34, 2> ms{m_left, m_right};
  return TriangulateMultiView(pts, ms);
}

// Angle between the rays C1->P and C2->P.
inline double TriangulationAngle(const Vec3& p, const Vec3& c1, const Vec3& c2) {
  const Vec3 a = p - c1, b = p - c2;
  const double na = a.norm(), nb = b.norm();
  if (!(na > 1e-12) || !(nb > 1e-12)) Fail(ErrorCode::kCoincidentPoint, "point coincides with a camera center");
  return std::acos(std::clamp(Dot(a, b) / (na * nb), -1.0, 1.0));
}

struct CheiralityResult {
  CameraPose pose;
  int candidate = -1;
  std::array<int, 4> counts{};
};

struct CheiralityOptions {
  double tie_margin = 0.05;     // second-best within this fraction of best is ambiguous
  double min_fraction = 0.5;    // best must cover at least this fraction of points
};

// Votes each candidate by the number of correspondences triangulating in
// front of both cameras. Inputs are normalized image coordinates.
inline CheiralityResult SelectPoseCheirality(const std::array<PoseCandidate, 4>& candidates,
                                             std::span<const Vec2> left, std::span<const Vec2> right,
                                             const CheiralityOptions& opts = {}) {
  if (left.size() != right.size() || left.empty())
    Fail(ErrorCode::kInvalidArgument, "cheirality needs >= 1 correspondence");
  const Mat34 ml = CameraPose{}.matrix();
  CheiralityResult out;
  for (int c = 0; c < 4; ++c) {
    const CameraPose pose{candidates[c].rotation, candidates[c].translation};
    const Mat34 mr = pose.matrix();
    int count = 0;
    for (std::size_t k = 0; k < left.size(); ++k) {
      Vec3 p;
      try {
        p = TriangulateDlt(left[k], right[k], ml, mr);
      } catch (const Error&) {
        continue;
      }
      if (p[2] > 0 && pose.transform(p)[2] > 0) ++count;
    }
    out.counts[c] = count;
  }
  std::array<int, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return out.counts[a] > out.counts[b]; });
  const int best = out.counts[order[0]];
  const int second = out.counts[order[1]];
  const double n = static_cast<double>(left.size());
  if (best == 0 || best < opts.min_fraction * n || second >= (1.0 - opts.tie_margin) * best)
    Fail(ErrorCode::kCheiralityAmbiguous, "no unique candidate with positive depth");
  out.candidate = order[0];
  out.pose = {candidates[order[0]].rotation, candidates[order[0]].translation};
  return out;
}

}  // namespace sfm
