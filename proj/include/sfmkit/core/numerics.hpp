#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"

namespace sfm {

// Module tolerances. Callers may pass their own where an overload allows it.
struct NumericTolerances {
  double svd_relative = 1e-15;        // Jacobi rotation threshold
  double singular_tie = 1e-12;        // relative gap for the ambiguity flag
  double singular_det = 1e-12;        // |det| floor for rq_decompose
  double homogeneous_w = 1e-12;       // |w| floor for dehomogenization
};

inline constexpr NumericTolerances kDefaultTolerances{};

inline Mat3 Skew(const Vec3& v) {
  return {0.0, -v[2], v[1],  //
          v[2], 0.0, -v[0],  //
          -v[1], v[0], 0.0};
}

// Singular value decomposition A = U diag(s) V^T with s sorted descending.
// u is rows(A) x n, v is n x n, n = cols(A).
struct Svd {
  Mat u;
  std::vector<double> s;
  Mat v;
};

// One-sided (Hestenes) Jacobi. Wide inputs are padded with zero rows so that
// the full right-singular basis is always produced.
inline Svd ComputeSvd(const Mat& a, double tol = kDefaultTolerances.svd_relative) {
  const int m = a.rows();
  const int n = a.cols();
  const int mp = std::max(m, n);

  // Column-major working copy; columns are rotated in place.
  std::vector<std::vector<double>> cols(n, std::vector<double>(mp, 0.0));
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) cols[c][r] = a(r, c);
  std::vector<std::vector<double>> vcols(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) vcols[i][i] = 1.0;

  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        auto& cp = cols[p];
        auto& cq = cols[q];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int i = 0; i < mp; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < mp; ++i) {
          const double xp = cp[i], xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
        auto& vp = vcols[p];
        auto& vq = vcols[q];
        for (int i = 0; i < n; ++i) {
          const double xp = vp[i], xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (int c = 0; c < n; ++c) {
    double ss = 0.0;
    for (double x : cols[c]) ss += x * x;
    sigma[c] = std::sqrt(ss);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return sigma[i] > sigma[j]; });

  Svd out{Mat(m, n), std::vector<double>(n), Mat(n, n)};
  for (int k = 0; k < n; ++k) {
    const int c = order[k];
    out.s[k] = sigma[c];
    for (int i = 0; i < n; ++i) out.v(i, k) = vcols[c][i];
    if (sigma[c] > 0.0)
      for (int i = 0; i < m; ++i) out.u(i, k) = cols[c][i] / sigma[c];
  }
  return out;
}

struct Svd3 {
  Mat3 u;
  Vec3 s;
  Mat3 v;
};

// Below this fraction of the largest singular value the second one is
// treated as zero when completing the left basis.
inline constexpr double kRankOneRelative = 1e-12;

inline Svd3 ComputeSvd(const Mat3& a) {
  const Svd d = ComputeSvd(Mat(a));
  Svd3 out;
  out.u = d.u.fixed<3, 3>();
  out.v = d.v.fixed<3, 3>();
  out.s = {d.s[0], d.s[1], d.s[2]};
  // A left singular vector whose singular value is at round-off level is
  // noise, and an exactly zero one is left as a zero column. The third column
  // is always the cross product of the first two, signed to agree with the
  // computed column, which is exact whenever that column was reliable.
  if (d.s[0] == 0.0) {
    out.u = Mat3::Identity();
    return out;
  }
  const Vec3 u0 = out.u.col(0);
  if (d.s[1] <= kRankOneRelative * d.s[0]) {
    const Vec3 seed = std::abs(u0[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 b1 = Cross(u0, seed).normalized();
    out.u.set_col(1, b1);
    out.u.set_col(2, Cross(u0, b1));
  } else {
    Vec3 u2 = Cross(u0, out.u.col(1)).normalized();
    if (Dot(u2, out.u.col(2)) < 0) u2 = -u2;
    out.u.set_col(2, u2);
  }
  return out;
}

struct NullVector {
  std::vector<double> vector;           // unit norm
  bool ambiguous = false;               // two smallest singular values tie
  std::vector<double> singular_values;  // descending
};

// Right-singular vector of the smallest singular value: the least-squares
// solution of A v = 0 subject to |v| = 1.
inline NullVector SmallestSingularVector(const Mat& a,
                                         double tie_tol = kDefaultTolerances.singular_tie) {
  if (a.rows() < 1 || a.cols() < 1) Fail(ErrorCode::kInvalidArgument, "empty matrix");
  if (!a.all_finite()) Fail(ErrorCode::kInvalidArgument, "non-finite matrix entries");
  const Svd d = ComputeSvd(a);
  const int n = a.cols();
  NullVector out;
  out.vector.resize(n);
  for (int i = 0; i < n; ++i) out.vector[i] = d.v(i, n - 1);
  out.singular_values = d.s;
  if (n >= 2) {
    const double scale = std::max(d.s.front(), std::numeric_limits<double>::min());
    out.ambiguous = (d.s[n - 2] - d.s[n - 1]) <= tie_tol * scale;
  }
  return out;
}

inline Mat3 Inverse(const Mat3& m) {
  const double det = Determinant(m);
  if (std::abs(det) <= 0.0 || !std::isfinite(det)) Fail(ErrorCode::kSingularMatrix, "cannot invert 3x3");
  Mat3 inv;
  inv(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  inv(0, 1) = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
  inv(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  inv(1, 0) = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
  inv(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
  inv(1, 2) = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
  inv(2, 0) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
  inv(2, 1) = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
  inv(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return inv / det;
}

// Householder QR of a 3x3 matrix: A = Q R, Q orthogonal, R upper-triangular.
inline void QrDecompose(const Mat3& a, Mat3& q, Mat3& r) {
  r = a;
  q = Mat3::Identity();
  for (int k = 0; k < 2; ++k) {
    double norm = 0.0;
    for (int i = k; i < 3; ++i) norm += r(i, k) * r(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    Vec3 v;
    const double alpha = r(k, k) > 0 ? -norm : norm;
    for (int i = k; i < 3; ++i) v[i] = r(i, k);
    v[k] -= alpha;
    const double vv = v.squared_norm();
    if (vv == 0.0) continue;
    const Mat3 h = Mat3::Identity() - (2.0 / vv) * (v * v.transpose());
    r = h * r;
    q = q * h;
  }
  for (int i = 1; i < 3; ++i)
    for (int j = 0; j < i; ++j) r(i, j) = 0.0;
}

struct RqResult {
  Mat3 k;  // upper-triangular, positive diagonal
  Mat3 r;  // rotation
};

// H = K R via QR of the inverse: H^-1 = Q U  =>  H = U^-1 Q^T.
inline RqResult RqDecompose(const Mat3& h, double det_tol = kDefaultTolerances.singular_det) {
  const double det = Determinant(h);
  if (!(std::abs(det) > det_tol)) Fail(ErrorCode::kSingularMatrix, "rq_decompose needs invertible H");
  if (det < 0) Fail(ErrorCode::kNegativeDeterminant, "rq_decompose needs det(H) > 0 for a proper rotation");
  Mat3 q, upper;
  QrDecompose(Inverse(h), q, upper);
  Mat3 k = Inverse(upper);
  Mat3 rot = q.transpose();
  for (int i = 0; i < 3; ++i) {
    if (k(i, i) < 0) {
      for (int row = 0; row < 3; ++row) k(row, i) = -k(row, i);
      for (int col = 0; col < 3; ++col) rot(i, col) = -rot(i, col);
    }
  }
  // Inverse of an upper-triangular matrix is upper-triangular up to round-off.
  k(1, 0) = k(2, 0) = k(2, 1) = 0.0;
  return {k, rot};
}

// Rodrigues map from axis-angle to rotation matrix.
inline Mat3 RotationExp(const Vec3& w) {
  const double theta2 = w.squared_norm();
  const Mat3 wx = Skew(w);
  double a, b;
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * wx + b * (wx * wx);
}

inline Vec3 RotationLog(const Mat3& r) {
  const Vec3 vee{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  const double sin_theta = 0.5 * vee.norm();
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < 1e-6) {
    // theta / sin(theta) ~ 1 + theta^2 / 6
    return 0.5 * (1.0 + theta * theta / 6.0) * vee;
  }
  if (theta < 2.5) return (theta / (2.0 * sin_theta)) * vee;

  // Near pi: the symmetric part is (1 - cos) a a^T + cos I. Take the column
  // with the largest diagonal entry to recover the axis.
  const Mat3 sym = 0.5 * (r + r.transpose()) - cos_theta * Mat3::Identity();
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (sym(i, i) > sym(best, best)) best = i;
  Vec3 axis = sym.col(best).normalized();
  if (Dot(axis, vee) < 0) axis = -axis;
  return theta * axis;
}

inline bool IsRotation(const Mat3& r, double tol = 1e-9) {
  const Mat3 e = r.transpose() * r - Mat3::Identity();
  return e.max_abs() <= tol && std::abs(Determinant(r) - 1.0) <= tol;
}

// Closest rotation in Frobenius norm.
inline Mat3 NearestRotation(const Mat3& m) {
  const Svd3 d = ComputeSvd(m);
  Mat3 r = d.u * d.v.transpose();
  if (Determinant(r) < 0) {
    Mat3 u = d.u;
    u.set_col(2, -u.col(2));
    r = u * d.v.transpose();
  }
  return r;
}

inline std::vector<double> FromHomogeneous(std::span<const double> p,
                                           double w_tol = kDefaultTolerances.homogeneous_w) {
  if (p.size() < 2) Fail(ErrorCode::kInvalidArgument, "homogeneous vector too short");
  const double w = p.back();
  if (!(std::abs(w) > w_tol)) Fail(ErrorCode::kPointAtInfinity, "homogeneous weight is zero");
  std::vector<double> out(p.size() - 1);
  for (std::size_t i = 0; i + 1 < p.size(); ++i) out[i] = p[i] / w;
  return out;
}

inline Vec2 FromHomogeneous(const Vec3& p, double w_tol = kDefaultTolerances.homogeneous_w) {
  if (!(std::abs(p[2]) > w_tol)) Fail(ErrorCode::kPointAtInfinity, "homogeneous weight is zero");
  return {p[0] / p[2], p[1] / p[2]};
}

inline Vec3 FromHomogeneous(const Vec4& p, double w_tol = kDefaultTolerances.homogeneous_w) {
  if (!(std::abs(p[3]) > w_tol)) Fail(ErrorCode::kPointAtInfinity, "homogeneous weight is zero");
  return {p[0] / p[3], p[1] / p[3], p[2] / p[3]};
}

// In-place Cholesky solve of a symmetric positive-definite system. Returns
// false when a pivot is not positive; `a` is clobbered either way.
inline bool CholeskySolve(Mat& a, std::span<double> b) {
  const int n = a.rows();
  for (int j = 0; j < n; ++j) {
    double* rj = a.row_ptr(j);
    double d = rj[j];
    for (int k = 0; k < j; ++k) d -= rj[k] * rj[k];
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    d = std::sqrt(d);
    rj[j] = d;
    for (int i = j + 1; i < n; ++i) {
      double* ri = a.row_ptr(i);
      double s = ri[j];
      for (int k = 0; k < j; ++k) s -= ri[k] * rj[k];
      ri[j] = s / d;
    }
  }
  for (int i = 0; i < n; ++i) {
    const double* ri = a.row_ptr(i);
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= ri[k] * b[k];
    b[i] = s / ri[i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
    b[i] = s / a(i, i);
  }
  return true;
}

}  // namespace sfm
