#pragma once

#include <cmath>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"
#include "sfmkit/core/numerics.hpp"

namespace sfm {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  Mat3 matrix() const { return {fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0}; }

  bool valid() const {
    return fx > 0 && fy > 0 && std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy) &&
           std::isfinite(skew);
  }

  // Pixel -> normalized image coordinates (K^-1 applied).
  Vec2 normalize(const Vec2& px) const {
    const double y = (px[1] - cy) / fy;
    return {(px[0] - cx - skew * y) / fx, y};
  }

  Vec2 denormalize(const Vec2& n) const { return {fx * n[0] + skew * n[1] + cx, fy * n[1] + cy}; }

  static CameraIntrinsics FromMatrix(const Mat3& k) {
    return {k(0, 0) / k(2, 2), k(1, 1) / k(2, 2), k(0, 2) / k(2, 2), k(1, 2) / k(2, 2), k(0, 1) / k(2, 2)};
  }
};

// World-to-camera transform: x_cam = R x_world + t.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation;

  Vec3 transform(const Vec3& p) const { return rotation * p + translation; }

  Mat34 matrix() const {
    Mat34 m;
    m.set_block(0, 0, rotation);
    m.set_col(3, translation);
    return m;
  }

  Vec3 center() const { return -(rotation.transpose() * translation); }

  static CameraPose FromCenter(const Mat3& r, const Vec3& center) { return {r, -(r * center)}; }
};

inline Vec3 CameraCenter(const CameraPose& pose) { return pose.center(); }

inline Mat34 ProjectionMatrix(const CameraIntrinsics& k, const CameraPose& pose) { return k.matrix() * pose.matrix(); }

inline constexpr double kMinDepth = 1e-9;

inline Vec2 ProjectPoint(const CameraPose& pose, const CameraIntrinsics& k, const Vec3& p) {
  const Vec3 x = pose.transform(p);
  if (!(x[2] > kMinDepth)) Fail(ErrorCode::kBehindCamera, "point is not in front of the camera");
  return {k.fx * x[0] / x[2] + k.skew * x[1] / x[2] + k.cx, k.fy * x[1] / x[2] + k.cy};
}

// Left Jacobian of SO(3): d/dw exp(w) p = -[exp(w) p]x J_l(w).
inline Mat3 LeftJacobianSO3(const Vec3& w) {
  const double theta2 = w.squared_norm();
  const Mat3 wx = Skew(w);
  double a, b;
  if (theta2 < 1e-8) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + a * wx + b * (wx * wx);
}

using PoseJacobian = Matrix<2, 6>;
using PointJacobian = Matrix<2, 3>;

// Projection of `p` under the pose (exp(w), t) with derivatives w.r.t.
// (w, t) and p. Returns false when the point is not in front of the camera.
inline bool ProjectWithJacobians(const Mat3& rotation, const Vec3& w, const Vec3& t, const CameraIntrinsics& k,
                                 const Vec3& p, Vec2& pixel, PoseJacobian* d_pose, PointJacobian* d_point) {
  const Vec3 rp = rotation * p;
  const Vec3 x = rp + t;
  if (!(x[2] > kMinDepth)) return false;
  const double iz = 1.0 / x[2];
  pixel = {k.fx * x[0] * iz + k.skew * x[1] * iz + k.cx, k.fy * x[1] * iz + k.cy};
  if (!d_pose && !d_point) return true;
  // d pixel / d x_cam
  Matrix<2, 3> dpx;
  dpx(0, 0) = k.fx * iz;
  dpx(0, 1) = k.skew * iz;
  dpx(0, 2) = -(k.fx * x[0] + k.skew * x[1]) * iz * iz;
  dpx(1, 0) = 0.0;
  dpx(1, 1) = k.fy * iz;
  dpx(1, 2) = -k.fy * x[1] * iz * iz;
  if (d_pose) {
    const Matrix<2, 3> drot = dpx * (-(Skew(rp) * LeftJacobianSO3(w)));
    d_pose->set_block(0, 0, drot);
    d_pose->set_block(0, 3, dpx);
  }
  if (d_point) *d_point = dpx * rotation;
  return true;
}

}  // namespace sfm
