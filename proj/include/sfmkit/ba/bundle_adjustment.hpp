#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"
#include "sfmkit/core/numerics.hpp"
#include "sfmkit/core/parallel.hpp"
#include "sfmkit/geometry/camera.hpp"

namespace sfm {

struct Observation {
  int pose = 0;
  int point = 0;
  Vec2 pixel;
};

// Pose 0 is the gauge anchor and is never modified. Intrinsics are fixed.
struct BAProblem {
  std::vector<CameraPose> poses;
  std::vector<Vec3> points;
  CameraIntrinsics intrinsics;
  std::vector<Observation> observations;
};

inline void ValidateProblem(const BAProblem& p) {
  if (!p.intrinsics.valid()) Fail(ErrorCode::kInvalidArgument, "invalid intrinsics");
  for (const Observation& o : p.observations) {
    if (o.pose < 0 || o.pose >= static_cast<int>(p.poses.size()) || o.point < 0 ||
        o.point >= static_cast<int>(p.points.size()))
      Fail(ErrorCode::kInvalidArgument, "observation references an invalid index");
  }
}

// Residual assigned to an observation whose point is not in front of its
// camera. Its Jacobian blocks are zero.
inline constexpr double kBehindCameraResidual = 1e4;

// Parameter vector layout: (w, t) per pose, then xyz per point.
inline int PoseOffset(int pose) { return 6 * pose; }
inline int PointOffset(const BAProblem& p, int point) { return 6 * static_cast<int>(p.poses.size()) + 3 * point; }
inline int ParameterCount(const BAProblem& p) { return PointOffset(p, static_cast<int>(p.points.size())); }

inline std::vector<double> Flatten(const BAProblem& p) {
  std::vector<double> x(ParameterCount(p));
  for (std::size_t j = 0; j < p.poses.size(); ++j) {
    const Vec3 w = RotationLog(p.poses[j].rotation);
    for (int k = 0; k < 3; ++k) {
      x[6 * j + k] = w[k];
      x[6 * j + 3 + k] = p.poses[j].translation[k];
    }
  }
  for (std::size_t i = 0; i < p.points.size(); ++i)
    for (int k = 0; k < 3; ++k) x[PointOffset(p, static_cast<int>(i)) + k] = p.points[i][k];
  return x;
}

// Inverse of Flatten. Pose 0 is copied from `like` unchanged.
inline BAProblem Unflatten(const BAProblem& like, std::span<const double> x) {
  BAProblem out = like;
  for (std::size_t j = 1; j < out.poses.size(); ++j) {
    const Vec3 w{x[6 * j], x[6 * j + 1], x[6 * j + 2]};
    out.poses[j] = {RotationExp(w), {x[6 * j + 3], x[6 * j + 4], x[6 * j + 5]}};
  }
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    const int o = PointOffset(out, static_cast<int>(i));
    out.points[i] = {x[o], x[o + 1], x[o + 2]};
  }
  return out;
}

struct Linearization {
  std::vector<double> residuals;           // 2 per observation, (predicted - observed)
  std::vector<PoseJacobian> pose_blocks;   // zero for pose 0 and behind-camera rows
  std::vector<PointJacobian> point_blocks;
  std::vector<std::uint8_t> behind_camera;
  int behind_count = 0;

  double cost() const {
    double c = 0.0;
    for (double r : residuals) c += r * r;
    return c;
  }
};

namespace detail {

inline Linearization Linearize(const BAProblem& p, std::span<const Vec3> omegas, bool with_jacobian, int threads) {
  const std::size_t m = p.observations.size();
  Linearization lin;
  lin.residuals.assign(2 * m, 0.0);
  lin.behind_camera.assign(m, 0);
  if (with_jacobian) {
    lin.pose_blocks.assign(m, PoseJacobian{});
    lin.point_blocks.assign(m, PointJacobian{});
  }
  ParallelFor(m, threads, [&](std::size_t k) {
    const Observation& o = p.observations[k];
    const CameraPose& pose = p.poses[o.pose];
    Vec2 px;
    PoseJacobian* jp = with_jacobian ? &lin.pose_blocks[k] : nullptr;
    PointJacobian* jx = with_jacobian ? &lin.point_blocks[k] : nullptr;
    if (!ProjectWithJacobians(pose.rotation, omegas[o.pose], pose.translation, p.intrinsics, p.points[o.point], px, jp,
                              jx)) {
      lin.behind_camera[k] = 1;
      lin.residuals[2 * k] = kBehindCameraResidual / std::sqrt(2.0);
      lin.residuals[2 * k + 1] = kBehindCameraResidual / std::sqrt(2.0);
      if (with_jacobian) {
        lin.pose_blocks[k] = {};
        lin.point_blocks[k] = {};
      }
      return;
    }
    lin.residuals[2 * k] = px[0] - o.pixel[0];
    lin.residuals[2 * k + 1] = px[1] - o.pixel[1];
    if (with_jacobian && o.pose == 0) lin.pose_blocks[k] = {};
  });
  for (std::uint8_t b : lin.behind_camera) lin.behind_count += b;
  return lin;
}

inline std::vector<Vec3> Omegas(const BAProblem& p) {
  std::vector<Vec3> w(p.poses.size());
  for (std::size_t j = 0; j < p.poses.size(); ++j) w[j] = RotationLog(p.poses[j].rotation);
  return w;
}

}  // namespace detail

// Residuals (observation order, dx then dy) with analytic Jacobian blocks.
// The pose derivative is taken at w = log(R).
inline Linearization ResidualsAndJacobian(const BAProblem& p, int threads = 1) {
  ValidateProblem(p);
  const std::vector<Vec3> w = detail::Omegas(p);
  return detail::Linearize(p, w, true, threads);
}

inline std::vector<double> Residuals(const BAProblem& p) {
  ValidateProblem(p);
  const std::vector<Vec3> w(p.poses.size());
  return detail::Linearize(p, w, false, 1).residuals;
}

// Full Jacobian as a dense matrix in the Flatten layout.
inline Mat DenseJacobian(const BAProblem& p, const Linearization& lin) {
  Mat j(static_cast<int>(2 * p.observations.size()), ParameterCount(p));
  for (std::size_t k = 0; k < p.observations.size(); ++k) {
    const Observation& o = p.observations[k];
    for (int r = 0; r < 2; ++r) {
      const int row = static_cast<int>(2 * k) + r;
      for (int c = 0; c < 6; ++c) j(row, PoseOffset(o.pose) + c) = lin.pose_blocks[k](r, c);
      for (int c = 0; c < 3; ++c) j(row, PointOffset(p, o.point) + c) = lin.point_blocks[k](r, c);
    }
  }
  return j;
}

namespace detail {

inline constexpr double kDampingFloor = 1e-12;

// Solves (J^T J + lambda diag(J^T J)) d = -J^T r over the free parameters
// (every pose but 0, every point) by eliminating the point blocks. Returns
// false when the reduced system is not positive definite.
inline bool SchurStep(const BAProblem& p, const Linearization& lin, double lambda, std::vector<double>& delta) {
  const int np = static_cast<int>(p.poses.size());
  const int nx = static_cast<int>(p.points.size());
  const int free_poses = np - 1;
  delta.assign(ParameterCount(p), 0.0);

  std::vector<Mat6> u(np);
  std::vector<Matrix<6, 1>> gp(np);
  std::vector<Mat3> v(nx);
  std::vector<Vec3> gx(nx);
  std::vector<std::vector<int>> obs_of_point(nx);
  std::vector<Matrix<6, 3>> w(p.observations.size());
  for (std::size_t k = 0; k < p.observations.size(); ++k) {
    const Observation& o = p.observations[k];
    const PoseJacobian& jp = lin.pose_blocks[k];
    const PointJacobian& jx = lin.point_blocks[k];
    const Vec2 r{lin.residuals[2 * k], lin.residuals[2 * k + 1]};
    u[o.pose] += jp.transpose() * jp;
    gp[o.pose] += jp.transpose() * r;
    v[o.point] += jx.transpose() * jx;
    gx[o.point] += jx.transpose() * r;
    w[k] = jp.transpose() * jx;
    obs_of_point[o.point].push_back(static_cast<int>(k));
  }

  std::vector<Mat3> v_inv(nx);
  for (int i = 0; i < nx; ++i) {
    Mat3 vd = v[i];
    for (int c = 0; c < 3; ++c) vd(c, c) += lambda * std::max(v[i](c, c), kDampingFloor);
    if (!(std::abs(Determinant(vd)) > 0.0)) return false;
    v_inv[i] = Inverse(vd);
  }

  const int n = 6 * free_poses;
  Mat s(n, n);
  std::vector<double> rhs(n, 0.0);
  for (int j = 1; j < np; ++j) {
    const int o = 6 * (j - 1);
    for (int a = 0; a < 6; ++a) {
      for (int b = 0; b < 6; ++b) s(o + a, o + b) = u[j](a, b);
      s(o + a, o + a) += lambda * std::max(u[j](a, a), kDampingFloor);
      rhs[o + a] = -gp[j][a];
    }
  }
  for (int i = 0; i < nx; ++i) {
    const auto& obs = obs_of_point[i];
    const Vec3 vg = v_inv[i] * gx[i];
    for (int ka : obs) {
      const int ja = p.observations[ka].pose;
      if (ja == 0) continue;
      const Matrix<6, 3> wv = w[ka] * v_inv[i];
      const Matrix<6, 1> corr = w[ka] * vg;
      for (int a = 0; a < 6; ++a) rhs[6 * (ja - 1) + a] += corr[a];
      for (int kb : obs) {
        const int jb = p.observations[kb].pose;
        if (jb == 0) continue;
        const Mat6 blk = wv * w[kb].transpose();
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) s(6 * (ja - 1) + a, 6 * (jb - 1) + b) -= blk(a, b);
      }
    }
  }
  if (n > 0 && !CholeskySolve(s, rhs)) return false;

  for (int j = 1; j < np; ++j)
    for (int a = 0; a < 6; ++a) delta[PoseOffset(j) + a] = rhs[6 * (j - 1) + a];
  for (int i = 0; i < nx; ++i) {
    Vec3 b = -gx[i];
    for (int k : obs_of_point[i]) {
      const int j = p.observations[k].pose;
      if (j == 0) continue;
      Matrix<6, 1> dp;
      for (int a = 0; a < 6; ++a) dp[a] = rhs[6 * (j - 1) + a];
      b -= w[k].transpose() * dp;
    }
    const Vec3 dx = v_inv[i] * b;
    for (int c = 0; c < 3; ++c) delta[PointOffset(p, i) + c] = dx[c];
  }
  return true;
}

// Same system solved densely; the reference for SchurStep.
inline bool DenseStep(const BAProblem& p, const Linearization& lin, double lambda, std::vector<double>& delta) {
  const Mat j = DenseJacobian(p, lin);
  const int skip = 6;  // pose 0 columns
  const int n = j.cols() - skip;
  Mat a(n, n);
  std::vector<double> b(n, 0.0);
  for (int r = 0; r < j.rows(); ++r) {
    const double* row = j.row_ptr(r) + skip;
    for (int c = 0; c < n; ++c) {
      if (row[c] == 0.0) continue;
      b[c] -= row[c] * lin.residuals[r];
      for (int d = 0; d < n; ++d) a(c, d) += row[c] * row[d];
    }
  }
  for (int c = 0; c < n; ++c) a(c, c) += lambda * std::max(a(c, c), kDampingFloor);
  if (!CholeskySolve(a, b)) return false;
  delta.assign(j.cols(), 0.0);
  std::copy(b.begin(), b.end(), delta.begin() + skip);
  return true;
}

}  // namespace detail

struct BAOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;  // relative cost change
  double gradient_tolerance = 1e-10;
  double initial_lambda = 1e-3;
  int threads = 1;
};

struct BAReport {
  double initial_rmse_px = 0.0;
  double final_rmse_px = 0.0;
  int iterations = 0;  // accepted steps
  bool converged = false;
  std::vector<double> per_view_before;  // mean reprojection error per pose, NaN if unobserved
  std::vector<double> per_view_after;
  std::vector<double> cost_history;  // initial cost, then every accepted cost
  int behind_camera = 0;             // flagged observations at exit
};

// Root-mean-square of per-observation reprojection distances.
inline double RmsePx(const Linearization& lin) {
  const std::size_t m = lin.residuals.size() / 2;
  return m == 0 ? 0.0 : std::sqrt(lin.cost() / static_cast<double>(m));
}

inline std::vector<double> PerViewMeanError(const BAProblem& p, const Linearization& lin) {
  std::vector<double> sum(p.poses.size(), 0.0);
  std::vector<int> count(p.poses.size(), 0);
  for (std::size_t k = 0; k < p.observations.size(); ++k) {
    const int j = p.observations[k].pose;
    sum[j] += std::hypot(lin.residuals[2 * k], lin.residuals[2 * k + 1]);
    ++count[j];
  }
  for (std::size_t j = 0; j < sum.size(); ++j)
    sum[j] = count[j] ? sum[j] / count[j] : std::numeric_limits<double>::quiet_NaN();
  return sum;
}

// Levenberg-Marquardt on the total squared reprojection error. Pose 0 is
// held fixed bit-for-bit; only strictly cost-decreasing steps are accepted.
inline BAReport Optimize(BAProblem& problem, const BAOptions& opts = {}) {
  ValidateProblem(problem);
  if (problem.poses.size() <= 1 && problem.points.empty())
    Fail(ErrorCode::kInvalidArgument, "problem has no free parameters");
  if (problem.observations.empty()) Fail(ErrorCode::kEmptyInput, "problem has no observations");

  std::vector<Vec3> omegas = detail::Omegas(problem);
  Linearization lin = detail::Linearize(problem, omegas, true, opts.threads);
  double cost = lin.cost();

  BAReport report;
  report.initial_rmse_px = RmsePx(lin);
  report.per_view_before = PerViewMeanError(problem, lin);
  report.cost_history.push_back(cost);

  const double zero_cost = 1e-24 * static_cast<double>(problem.observations.size());
  double lambda = opts.initial_lambda;
  bool accepted_any = false;
  std::vector<double> delta;

  while (report.iterations < opts.max_iterations) {
    if (cost <= zero_cost) {
      report.converged = true;
      break;
    }
    double grad = 0.0;
    {
      std::vector<double> g(ParameterCount(problem), 0.0);
      for (std::size_t k = 0; k < problem.observations.size(); ++k) {
        const Observation& o = problem.observations[k];
        const Vec2 r{lin.residuals[2 * k], lin.residuals[2 * k + 1]};
        const Matrix<6, 1> gp = lin.pose_blocks[k].transpose() * r;
        const Vec3 gx = lin.point_blocks[k].transpose() * r;
        for (int a = 0; a < 6; ++a) g[PoseOffset(o.pose) + a] += gp[a];
        for (int a = 0; a < 3; ++a) g[PointOffset(problem, o.point) + a] += gx[a];
      }
      for (double v : g) grad = std::max(grad, std::abs(v));
    }
    if (grad <= opts.gradient_tolerance) {
      report.converged = true;
      break;
    }

    bool stepped = false;
    bool tiny_step = false;
    while (lambda <= 1e12) {
      if (!detail::SchurStep(problem, lin, lambda, delta)) {
        lambda *= 10.0;
        continue;
      }
      double step_norm = 0.0, x_norm = 0.0;
      BAProblem candidate = problem;
      std::vector<Vec3> cand_omegas = omegas;
      for (std::size_t j = 1; j < problem.poses.size(); ++j) {
        const int o = PoseOffset(static_cast<int>(j));
        const Vec3 dw{delta[o], delta[o + 1], delta[o + 2]};
        const Vec3 dt{delta[o + 3], delta[o + 4], delta[o + 5]};
        const Mat3 r = RotationExp(omegas[j] + dw);
        cand_omegas[j] = RotationLog(r);
        candidate.poses[j] = {r, problem.poses[j].translation + dt};
        step_norm += dw.squared_norm() + dt.squared_norm();
        x_norm += omegas[j].squared_norm() + problem.poses[j].translation.squared_norm();
      }
      for (std::size_t i = 0; i < problem.points.size(); ++i) {
        const int o = PointOffset(problem, static_cast<int>(i));
        const Vec3 dx{delta[o], delta[o + 1], delta[o + 2]};
        candidate.points[i] = problem.points[i] + dx;
        step_norm += dx.squared_norm();
        x_norm += problem.points[i].squared_norm();
      }
      if (std::sqrt(step_norm) <= 1e-14 * (std::sqrt(x_norm) + 1e-14)) {
        tiny_step = true;
        break;
      }
      Linearization cand_lin = detail::Linearize(candidate, cand_omegas, true, opts.threads);
      const double cand_cost = cand_lin.cost();
      if (cand_cost < cost) {
        const double rel = (cost - cand_cost) / cost;
        problem = std::move(candidate);
        omegas = std::move(cand_omegas);
        lin = std::move(cand_lin);
        cost = cand_cost;
        report.cost_history.push_back(cost);
        ++report.iterations;
        lambda = std::max(lambda * 0.1, 1e-15);
        stepped = accepted_any = true;
        if (rel < opts.tolerance) report.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (tiny_step) {
      report.converged = true;
      break;
    }
    if (!stepped) {
      if (!accepted_any) Fail(ErrorCode::kDiverged, "damping exceeded 1e12 without an accepted step");
      report.converged = true;  // no further decrease attainable
      break;
    }
    if (report.converged) break;
  }

  report.final_rmse_px = RmsePx(lin);
  report.per_view_after = PerViewMeanError(problem, lin);
  report.behind_camera = lin.behind_count;
  return report;
}

inline BAReport Optimize(BAProblem& problem, int max_iterations, double tolerance = 1e-8) {
  BAOptions opts;
  opts.max_iterations = max_iterations;
  opts.tolerance = tolerance;
  return Optimize(problem, opts);
}

}  // namespace sfm
