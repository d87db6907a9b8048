// SPDX-License-Identifier: Apache-2.0
#pragma once

// Value-only counterparts of the tape ops, so model code templated on the
// backend runs on plain matrices (evaluation) and plain doubles (tests).

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "tapinn/errors.hpp"

namespace tapinn::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Vectorized tanh as 1 - 2 / (e^{2x} + 1); absolute error stays at round-off
/// and the limits +-1 come out exactly for large |x|.
template <class Derived>
Mat tanh_kernel(const Eigen::MatrixBase<Derived>& a) {
  return (1.0 - 2.0 / ((2.0 * a.derived().array()).exp() + 1.0)).matrix();
}

// ---- double ----

inline double add(double a, double b) { return a + b; }
inline double sub(double a, double b) { return a - b; }
inline double cmul(double a, double b) { return a * b; }
inline double cdiv(double a, double b) { return a / b; }
inline double scale(double a, double c) { return a * c; }
inline double shift(double a, double c) { return a + c; }
inline double neg(double a) { return -a; }
inline double tanh(double a) { return std::tanh(a); }
inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }
inline double sin(double a) { return std::sin(a); }
inline double cos(double a) { return std::cos(a); }
inline double powi(double a, int n) { return std::pow(a, n); }
inline double square(double a) { return a * a; }
inline double relu(double a) { return a > 0.0 ? a : 0.0; }
inline double sqrt(double a) { return std::sqrt(a); }
inline double constant_like(double, const Mat& value) { return value(0, 0); }

// ---- Mat ----

inline void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch(std::string(op) + ": shapes differ");
}

inline Mat add(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "add");
  return a + b;
}
inline Mat sub(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "sub");
  return a - b;
}
inline Mat cmul(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "cmul");
  return a.cwiseProduct(b);
}
inline Mat cdiv(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "cdiv");
  return a.cwiseQuotient(b);
}
inline Mat scale(const Mat& a, double c) { return a * c; }
inline Mat shift(const Mat& a, double c) { return (a.array() + c).matrix(); }
inline Mat neg(const Mat& a) { return -a; }

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  return a * b;
}

inline Mat add_bias(const Mat& x, const Mat& b) {
  if (b.cols() != 1 || b.rows() != x.rows()) throw ShapeMismatch("add_bias: bias must be rows(x) x 1");
  return x.colwise() + b.col(0);
}

inline Mat tanh(const Mat& a) { return tanh_kernel(a); }
inline Mat sigmoid(const Mat& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }
inline Mat sin(const Mat& a) { return a.array().sin().matrix(); }
inline Mat cos(const Mat& a) { return a.array().cos().matrix(); }
inline Mat powi(const Mat& a, int n) { return a.array().pow(static_cast<double>(n)).matrix(); }
inline Mat square(const Mat& a) { return a.array().square().matrix(); }
inline Mat relu(const Mat& a) { return a.cwiseMax(0.0); }
inline Mat sqrt(const Mat& a) { return a.array().sqrt().matrix(); }

inline Mat sum(const Mat& a) { return Mat::Constant(1, 1, a.sum()); }
inline Mat mean(const Mat& a) { return Mat::Constant(1, 1, a.mean()); }
inline Mat col_sums(const Mat& a) { return a.colwise().sum(); }

inline Mat slice_rows(const Mat& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw ShapeMismatch("slice_rows: out of range");
  return a.middleRows(start, n);
}
inline Mat slice_cols(const Mat& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw ShapeMismatch("slice_cols: out of range");
  return a.middleCols(start, n);
}

inline Mat concat_rows(const std::vector<Mat>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  Index rows = 0;
  for (const Mat& p : parts) {
    if (p.cols() != parts.front().cols()) throw ShapeMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat out(rows, parts.front().cols());
  Index r = 0;
  for (const Mat& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

inline Mat concat_cols(const std::vector<Mat>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  Index cols = 0;
  for (const Mat& p : parts) {
    if (p.rows() != parts.front().rows()) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(parts.front().rows(), cols);
  Index c = 0;
  for (const Mat& p : parts) {
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

inline Mat repeat_cols(const Mat& a, Index times) {
  Mat out(a.rows(), a.cols() * times);
  for (Index j = 0; j < a.cols(); ++j) out.middleCols(j * times, times) = a.col(j).replicate(1, times);
  return out;
}

inline Mat gather_cols(const Mat& a, const std::vector<Index>& cols) {
  Mat out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = a.col(cols[k]);
  return out;
}

inline Mat reshape(const Mat& a, Index rows, Index cols) {
  if (rows * cols != a.size()) throw ShapeMismatch("reshape: element count differs");
  return a.reshaped(rows, cols);
}

inline Mat constant_like(const Mat&, Mat value) { return value; }

}  // namespace tapinn::ad
