#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mcfbc/errors.hpp"

namespace mcfbc {

/// Dense row-major matrix. Small sizes only (dictionaries, heads).
template <class T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t size() const { return data.size(); }
};

/// y = A^T x  (A: rows x cols, x: rows) -> cols
template <class T>
void matvec_transposed(const Matrix<T>& a, const T* x, T* out) {
  for (int c = 0; c < a.cols; ++c) out[c] = T(0);
  for (int r = 0; r < a.rows; ++r) {
    const T xr = x[r];
    const T* row = a.data.data() + static_cast<std::size_t>(r) * a.cols;
    for (int c = 0; c < a.cols; ++c) out[c] += row[c] * xr;
  }
}

/// y = A x  (A: rows x cols, x: cols) -> rows
template <class T>
void matvec(const Matrix<T>& a, const T* x, T* out) {
  for (int r = 0; r < a.rows; ++r) {
    const T* row = a.data.data() + static_cast<std::size_t>(r) * a.cols;
    T acc = T(0);
    for (int c = 0; c < a.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

/// A += x y^T (outer-product accumulate).
template <class T>
void outer_accumulate(Matrix<T>& a, const T* x, const T* y) {
  for (int r = 0; r < a.rows; ++r) {
    T* row = a.data.data() + static_cast<std::size_t>(r) * a.cols;
    const T xr = x[r];
    for (int c = 0; c < a.cols; ++c) row[c] += xr * y[c];
  }
}

/// Solves A x = b in place via Gaussian elimination with partial pivoting.
/// Throws SingularSystem when the pivot collapses.
template <class T>
std::vector<T> solve_dense(Matrix<T> a, std::vector<T> b) {
  if (a.rows != a.cols || static_cast<std::size_t>(a.rows) != b.size())
    throw ShapeMismatch("solve_dense: square system required");
  const int n = a.rows;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    T best = std::abs(a(col, col));
    for (int r = col + 1; r < n; ++r) {
      const T mag = std::abs(a(r, col));
      if (mag > best) {
        best = mag;
        pivot = r;
      }
    }
    if (!(best > T(0)) || !std::isfinite(static_cast<double>(best)))
      throw SingularSystem("solve_dense: zero pivot at column " + std::to_string(col));
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
      std::swap(b[pivot], b[col]);
    }
    const T inv = T(1) / a(col, col);
    for (int r = col + 1; r < n; ++r) {
      const T factor = a(r, col) * inv;
      if (factor == T(0)) continue;
      for (int c = col; c < n; ++c) a(r, c) -= factor * a(col, c);
      b[r] -= factor * b[col];
    }
  }
  std::vector<T> x(static_cast<std::size_t>(n));
  for (int r = n - 1; r >= 0; --r) {
    T acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a(r, c) * x[c];
    x[r] = acc / a(r, r);
  }
  return x;
}

}  // namespace mcfbc
