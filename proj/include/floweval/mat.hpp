#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <vector>

namespace floweval {

// Dense row-major matrix of doubles. Just enough linear algebra for the
// act language model; everything stays on the CPU in double precision.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// Non-owning read-only view; lets weight tensors be multiplied in place.
struct MatView {
  std::size_t rows = 0, cols = 0;
  const double* data = nullptr;

  MatView() = default;
  MatView(std::size_t r, std::size_t c, const double* d) : rows(r), cols(c), data(d) {}
  MatView(const Mat& m) : rows(m.rows), cols(m.cols), data(m.a.data()) {}  // NOLINT
  const double* row(std::size_t i) const { return data + i * cols; }
};

// C = A * B  (m x k) * (k x n)
inline void matmul(MatView A, MatView B, Mat& C) {
  assert(A.cols == B.rows);
  C = Mat(A.rows, B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (std::size_t k = 0; k < A.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = B.row(k);
      for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C += A^T * B  (k x m)^T * (k x n) -> m x n, accumulated into raw storage
inline void matmul_at_b_accum(MatView A, MatView B, double* C) {
  assert(A.rows == B.rows);
  for (std::size_t k = 0; k < A.rows; ++k) {
    const double* arow = A.row(k);
    const double* brow = B.row(k);
    for (std::size_t i = 0; i < A.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = C + i * B.cols;
      for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

// C = A * B^T  (m x k) * (n x k)^T -> m x n
inline void matmul_a_bt(MatView A, MatView B, Mat& C) {
  assert(A.cols == B.cols);
  C = Mat(A.rows, B.rows);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (std::size_t j = 0; j < B.rows; ++j) {
      const double* brow = B.row(j);
      double s = 0;
      for (std::size_t k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
}

}  // namespace floweval
