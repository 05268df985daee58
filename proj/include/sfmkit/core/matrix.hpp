#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <ostream>
#include <span>
#include <vector>

namespace sfm {

// Fixed-size row-major matrix of doubles. Column vectors are Matrix<N, 1>.
template <int R, int C>
class Matrix {
  static_assert(R >= 1 && C >= 1);

 public:
  static constexpr int kRows = R;
  static constexpr int kCols = C;

  constexpr Matrix() : data_{} {}

  // Row-major initialization; missing trailing entries are zero.
  constexpr Matrix(std::initializer_list<double> values) : data_{} {
    assert(values.size() <= static_cast<std::size_t>(R * C));
    std::size_t i = 0;
    for (double v : values) data_[i++] = v;
  }

  static constexpr Matrix Zero() { return Matrix(); }

  static constexpr Matrix Identity() {
    static_assert(R == C);
    Matrix m;
    for (int i = 0; i < R; ++i) m(i, i) = 1.0;
    return m;
  }

  static constexpr Matrix Constant(double v) {
    Matrix m;
    m.data_.fill(v);
    return m;
  }

  constexpr double& operator()(int r, int c) { return data_[r * C + c]; }
  constexpr double operator()(int r, int c) const { return data_[r * C + c]; }

  // Linear access, mostly for vectors.
  constexpr double& operator[](int i) { return data_[i]; }
  constexpr double operator[](int i) const { return data_[i]; }

  constexpr double x() const { return data_[0]; }
  constexpr double y() const { return data_[1]; }
  constexpr double z() const { return data_[2]; }

  constexpr int rows() const { return R; }
  constexpr int cols() const { return C; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double, R * C> span() const { return std::span<const double, R * C>(data_); }

  constexpr Matrix<C, R> transpose() const {
    Matrix<C, R> t;
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  Matrix<1, C> row(int r) const {
    Matrix<1, C> out;
    for (int c = 0; c < C; ++c) out(0, c) = (*this)(r, c);
    return out;
  }

  Matrix<R, 1> col(int c) const {
    Matrix<R, 1> out;
    for (int r = 0; r < R; ++r) out(r, 0) = (*this)(r, c);
    return out;
  }

  void set_row(int r, const Matrix<1, C>& v) {
    for (int c = 0; c < C; ++c) (*this)(r, c) = v(0, c);
  }

  void set_col(int c, const Matrix<R, 1>& v) {
    for (int r = 0; r < R; ++r) (*this)(r, c) = v(r, 0);
  }

  template <int BR, int BC>
  Matrix<BR, BC> block(int r0, int c0) const {
    Matrix<BR, BC> out;
    for (int r = 0; r < BR; ++r)
      for (int c = 0; c < BC; ++c) out(r, c) = (*this)(r0 + r, c0 + c);
    return out;
  }

  template <int BR, int BC>
  void set_block(int r0, int c0, const Matrix<BR, BC>& b) {
    for (int r = 0; r < BR; ++r)
      for (int c = 0; c < BC; ++c) (*this)(r0 + r, c0 + c) = b(r, c);
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  // Frobenius norm for matrices, Euclidean norm for vectors.
  double norm() const { return std::sqrt(squared_norm()); }

  Matrix normalized() const { return *this / norm(); }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double trace() const {
    static_assert(R == C);
    double t = 0.0;
    for (int i = 0; i < R; ++i) t += (*this)(i, i);
    return t;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Matrix& operator+=(const Matrix& o) {
    for (int i = 0; i < R * C; ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    for (int i = 0; i < R * C; ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  Matrix& operator/=(double s) {
    for (double& v : data_) v /= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator-(Matrix a) { return a *= -1.0; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }
  friend Matrix operator/(Matrix a, double s) { return a /= s; }
  friend bool operator==(const Matrix& a, const Matrix& b) { return a.data_ == b.data_; }

  friend std::ostream& operator<<(std::ostream& os, const Matrix& m) {
    os << "[";
    for (int r = 0; r < R; ++r) {
      os << (r ? "; " : "");
      for (int c = 0; c < C; ++c) os << (c ? " " : "") << m(r, c);
    }
    return os << "]";
  }

 private:
  std::array<double, R * C> data_;
};

template <int R, int K, int C>
Matrix<R, C> operator*(const Matrix<R, K>& a, const Matrix<K, C>& b) {
  Matrix<R, C> out;
  for (int r = 0; r < R; ++r)
    for (int k = 0; k < K; ++k) {
      const double v = a(r, k);
      if (v == 0.0) continue;
      for (int c = 0; c < C; ++c) out(r, c) += v * b(k, c);
    }
  return out;
}

using Vec2 = Matrix<2, 1>;
using Vec3 = Matrix<3, 1>;
using Vec4 = Matrix<4, 1>;
using Mat3 = Matrix<3, 3>;
using Mat34 = Matrix<3, 4>;
using Mat6 = Matrix<6, 6>;

template <int N>
double Dot(const Matrix<N, 1>& a, const Matrix<N, 1>& b) {
  double s = 0.0;
  for (int i = 0; i < N; ++i) s += a[i] * b[i];
  return s;
}

inline Vec3 Cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double Determinant(const Mat3& m) {
  return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
         m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
         m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

inline Vec3 Homogeneous(const Vec2& p) { return {p[0], p[1], 1.0}; }
inline Vec4 Homogeneous(const Vec3& p) { return {p[0], p[1], p[2], 1.0}; }

// Dynamic row-major matrix, used for stacked linear systems (DLT, 8-point,
// multi-view triangulation) and the reduced normal equations of BA.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    assert(rows >= 0 && cols >= 0);
  }

  template <int R, int C>
  explicit Mat(const Matrix<R, C>& m) : Mat(R, C) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) (*this)(r, c) = m(r, c);
  }

  static Mat Identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::span<const double> values() const { return data_; }

  template <int R, int C>
  Matrix<R, C> fixed() const {
    assert(rows_ == R && cols_ == C);
    Matrix<R, C> m;
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) m(r, c) = (*this)(r, c);
    return m;
  }

  template <int R, int C>
  void set_block(int r0, int c0, const Matrix<R, C>& b) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) (*this)(r0 + r, c0 + c) = b(r, c);
  }

  Mat transpose() const {
    Mat t(cols_, rows_);
    for (int r = 0; r < rows_; ++r)
      for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend Mat operator*(const Mat& a, const Mat& b) {
    assert(a.cols_ == b.rows_);
    Mat out(a.rows_, b.cols_);
    for (int r = 0; r < a.rows_; ++r)
      for (int k = 0; k < a.cols_; ++k) {
        const double v = a(r, k);
        if (v == 0.0) continue;
        const double* brow = b.row_ptr(k);
        double* orow = out.row_ptr(r);
        for (int c = 0; c < b.cols_; ++c) orow[c] += v * brow[c];
      }
    return out;
  }

  friend std::vector<double> operator*(const Mat& a, std::span<const double> v) {
    assert(static_cast<std::size_t>(a.cols_) == v.size());
    std::vector<double> out(a.rows_, 0.0);
    for (int r = 0; r < a.rows_; ++r) {
      const double* row = a.row_ptr(r);
      double s = 0.0;
      for (int c = 0; c < a.cols_; ++c) s += row[c] * v[c];
      out[r] = s;
    }
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

}  // namespace sfm
