#include "ftlab/matrix.hpp"

#include <cmath>
#include <limits>

#include "ftlab/errors.hpp"

namespace ftlab {

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::full(int r, int c, double v) {
  Matrix m(r, c);
  for (auto& x : m.data) x = v;
  return m;
}

Matrix Matrix::randn(int r, int c, double sd, Rng& rng) {
  Matrix m(r, c);
  for (auto& x : m.data) x = rng.normal(0.0, sd);
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

bool Matrix::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() + " * " +
                     b.shape_str());
  }
  Matrix c(a.rows, b.cols);
  matmul_acc(c, a, b);
  return c;
}

void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows || out.rows != a.rows || out.cols != b.cols) {
    throw ShapeError("matmul_acc: shape mismatch " + out.shape_str() + " += " +
                     a.shape_str() + " * " + b.shape_str());
  }
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    double* ci = &out.data[static_cast<std::size_t>(i) * m];
    const double* ai = &a.data[static_cast<std::size_t>(i) * k];
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = &b.data[static_cast<std::size_t>(p) * m];
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b) {
  // out += a * b^T, a: n x k, b: m x k, out: n x m
  if (a.cols != b.cols || out.rows != a.rows || out.cols != b.rows) {
    throw ShapeError("matmul_nt_acc: shape mismatch " + out.shape_str() + " += " +
                     a.shape_str() + " * " + b.shape_str() + "^T");
  }
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i) {
    const double* ai = &a.data[static_cast<std::size_t>(i) * k];
    double* ci = &out.data[static_cast<std::size_t>(i) * m];
    for (int j = 0; j < m; ++j) {
      const double* bj = &b.data[static_cast<std::size_t>(j) * k];
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b) {
  // out += a^T * b, a: k x n, b: k x m, out: n x m
  if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols) {
    throw ShapeError("matmul_tn_acc: shape mismatch " + out.shape_str() + " += " +
                     a.shape_str() + "^T * " + b.shape_str());
  }
  const int k = a.rows, n = a.cols, m = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ap = &a.data[static_cast<std::size_t>(p) * n];
    const double* bp = &b.data[static_cast<std::size_t>(p) * m];
    for (int i = 0; i < n; ++i) {
      const double av = ap[i];
      double* ci = &out.data[static_cast<std::size_t>(i) * m];
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const double* x = &m.data[static_cast<std::size_t>(i) * m.cols];
    double* y = &out.data[static_cast<std::size_t>(i) * m.cols];
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < m.cols; ++j) y[j] /= sum;
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const double* x = &m.data[static_cast<std::size_t>(i) * m.cols];
    double* y = &out.data[static_cast<std::size_t>(i) * m.cols];
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < m.cols; ++j) y[j] = x[j] - lse;
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add: shape mismatch " + a.shape_str() + " + " + b.shape_str());
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy(Matrix& a, double c, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("axpy: shape mismatch " + a.shape_str() + " += c*" + b.shape_str());
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += c * b.data[i];
}

namespace {
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);
}

double gelu_value(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_slope(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix rms_norm_rows(const Matrix& x, const Matrix& gain, Matrix* inv_rms) {
  if (gain.rows != 1 || gain.cols != x.cols) {
    throw ShapeError("rms_norm_rows: gain must be 1x" + std::to_string(x.cols) +
                     ", got " + gain.shape_str());
  }
  Matrix out(x.rows, x.cols);
  if (inv_rms) *inv_rms = Matrix(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) {
    double ss = 0.0;
    for (int j = 0; j < x.cols; ++j) ss += x.at(i, j) * x.at(i, j);
    const double inv = 1.0 / std::sqrt(ss / x.cols + kRmsNormEps);
    if (inv_rms) inv_rms->at(i, 0) = inv;
    for (int j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) * inv * gain.at(0, j);
  }
  return out;
}

double dot_all(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

double sum_all(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data) acc += x;
  return acc;
}

}  // namespace ftlab
