#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ftlab/rng.hpp"

namespace ftlab {

/// Dense row-major matrix of 64-bit floats. The carrier for every weight and
/// activation in the toy transformer. Values are treated as immutable once an
/// operation has produced them; exported operations never emit NaN/Inf.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix identity(int n);
  static Matrix full(int r, int c, double v);
  static Matrix randn(int r, int c, double sd, Rng& rng);

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;

  bool all_finite() const;
};

/// C = A * B. Throws ShapeError on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

/// out += A * B  /  A * B^T  /  A^T * B. Shapes must already agree.
void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b);
void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b);
void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b);

/// Row-wise softmax with max-subtraction; every row sums to 1.
Matrix softmax_rows(const Matrix& m);

/// Row-wise log-softmax (same stabilization).
Matrix log_softmax_rows(const Matrix& m);

/// Elementwise helpers used by the tape kernels.
Matrix transpose(const Matrix& m);
void add_inplace(Matrix& a, const Matrix& b);
void axpy(Matrix& a, double c, const Matrix& b);  // a += c * b

/// Scalar nonlinearities shared by the tape and the plain forward pass.
double gelu_value(double x);
double gelu_slope(double x);
double softplus_value(double x);
double sigmoid_value(double x);

constexpr double kRmsNormEps = 1e-6;

/// Row-wise RMS norm with gain; optionally reports 1/rms per row.
Matrix rms_norm_rows(const Matrix& x, const Matrix& gain, Matrix* inv_rms = nullptr);

double dot_all(const Matrix& a, const Matrix& b);
double sum_all(const Matrix& m);

}  // namespace ftlab
