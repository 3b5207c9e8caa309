#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace annotmix {

// Dense row-major matrix of doubles. The only numeric container in the
// library; vectors are 1xN or Nx1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

// c += a * b
inline void matmul_acc(Matrix& c, const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c += a * b^T
inline void matmul_nt_acc(Matrix& c, const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c += a^T * b
inline void matmul_tn_acc(Matrix& c, const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c.row(p);
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  Matrix c(a.rows(), b.cols());
  matmul_acc(c, a, b);
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Numerically stable row-wise softmax over groups of `group` consecutive
// entries; group == cols gives the usual per-row softmax.
inline Matrix softmax_groups_value(const Matrix& m, std::size_t group) {
  if (group == 0 || m.cols() % group != 0) {
    throw std::invalid_argument("softmax_groups: cols " + std::to_string(m.cols()) +
                                " not divisible by group " + std::to_string(group));
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* src = m.row(i);
    double* dst = out.row(i);
    for (std::size_t g = 0; g < m.cols(); g += group) {
      double mx = src[g];
      for (std::size_t j = 1; j < group; ++j) mx = std::max(mx, src[g + j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < group; ++j) {
        dst[g + j] = std::exp(src[g + j] - mx);
        sum += dst[g + j];
      }
      for (std::size_t j = 0; j < group; ++j) dst[g + j] /= sum;
    }
  }
  return out;
}

inline Matrix softmax_rows_value(const Matrix& m) { return softmax_groups_value(m, m.cols()); }

inline std::size_t argmax_row(const Matrix& m, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols(); ++j)
    if (m(r, j) > m(r, best)) best = j;  // ties keep the lowest index
  return best;
}

}  // namespace annotmix
