#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "vtlab/errors.hpp"
#include "vtlab/rng.hpp"

namespace vtlab {

// Dense row-major double matrix. Sized for the desk scale of this project
// (dimensions in the hundreds to low thousands); no views, no expression
// templates.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), d_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw DimensionError("negative matrix dims");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return d_.size(); }
  bool empty() const { return d_.empty(); }

  double& at(int r, int c) { return d_[static_cast<size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return d_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator()(int r, int c) { return at(r, c); }
  double operator()(int r, int c) const { return at(r, c); }

  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }
  double* row(int r) { return d_.data() + static_cast<size_t>(r) * cols_; }
  const double* row(int r) const { return d_.data() + static_cast<size_t>(r) * cols_; }

  void fill(double v) { std::fill(d_.begin(), d_.end(), v); }
  void set_zero() { fill(0.0); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : d_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Matrix randn(Rng& rng, int rows, int cols, double stddev) {
    Matrix m(rows, cols);
    for (auto& v : m.d_) v = stddev * rng.normal();
    return m;
  }

  static Matrix randu(Rng& rng, int rows, int cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (auto& v : m.d_) v = rng.uniform(lo, hi);
    return m;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> d_;
};

// C = A * B with an ikj loop; adequate throughput for this project's sizes.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  Matrix c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("add_inplace shape mismatch");
  double* pa = a.data();
  const double* pb = b.data();
  for (size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

inline uint64_t matrix_checksum(const Matrix& m, uint64_t h = 1469598103934665603ull) {
  return fnv1a64(m.data(), m.size() * sizeof(double), h);
}

}  // namespace vtlab
