#pragma once

// Data-parallel inner loops. Every kernel here has a serial counterpart in
// reference_kernels.hpp that the tests compare against.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace lspd {

/// Compressed sparse row matrix with single-precision weights.
struct SparseMatrix
{
  int rows = 0;
  int cols = 0;
  std::vector<std::int64_t> row_ptr{0};
  std::vector<int> col_idx;
  std::vector<float> values;

  std::int64_t nnz() const { return std::int64_t(values.size()); }
  SparseMatrix transposed() const;
  SparseMatrix select_rows(std::span<const int> rows_to_keep) const;
};

namespace kernels {

/// y = A x with double accumulation, rows in parallel.
template <typename T>
void spmv(SparseMatrix const &A, std::span<const T> x, std::span<T> y)
{
#pragma omp parallel for schedule(static)
  for (int r = 0; r < A.rows; ++r) {
    double acc = 0.0;
    for (std::int64_t k = A.row_ptr[r]; k < A.row_ptr[r + 1]; ++k) {
      acc += double(A.values[k]) * double(x[A.col_idx[k]]);
    }
    y[r] = T(acc);
  }
}

/// Same-padded 2-D cross-correlation, stride 1, odd square kernel.
/// x: (cin, h, w); weight: (cout, cin, k, k); y: (cout, h, w).
/// `cols` receives the im2col buffer (cin*k*k, h*w) for reuse in backward.
template <typename T>
void im2col(std::span<const T> x, int cin, int h, int w, int k, std::vector<T> &cols)
{
  int const pad = k / 2;
  int const hw = h * w;
  cols.assign(std::size_t(cin) * k * k * hw, T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T *dst = cols.data() + (std::size_t((c * k + ky) * k + kx)) * hw;
        T const *src = x.data() + std::size_t(c) * hw;
        int const dy = ky - pad;
        int const dx = kx - pad;
        int const x0 = std::max(0, -dx);
        int const x1 = std::min(w, w - dx);
        for (int i = 0; i < h; ++i) {
          int const si = i + dy;
          if (si < 0 || si >= h) { continue; }
          for (int j = x0; j < x1; ++j) { dst[i * w + j] = src[si * w + j + dx]; }
        }
      }
    }
  }
}

template <typename T>
void col2im(std::span<const T> cols, int cin, int h, int w, int k, std::span<T> gx)
{
  int const pad = k / 2;
  int const hw = h * w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < cin; ++c) {
    T *dst = gx.data() + std::size_t(c) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T const *src = cols.data() + (std::size_t((c * k + ky) * k + kx)) * hw;
        int const dy = ky - pad;
        int const dx = kx - pad;
        int const x0 = std::max(0, -dx);
        int const x1 = std::min(w, w - dx);
        for (int i = 0; i < h; ++i) {
          int const si = i + dy;
          if (si < 0 || si >= h) { continue; }
          for (int j = x0; j < x1; ++j) { dst[si * w + j + dx] += src[i * w + j]; }
        }
      }
    }
  }
}

/// Fixed-order sum of a[i] * b[i] over 16 independent lanes. Unlike Eigen's
/// dot/GEMV paths the result does not depend on the buffers' alignment, which
/// keeps training bitwise reproducible.
template <typename T>
T lane_dot(T const *a, T const *b, std::size_t n)
{
  constexpr std::size_t L = 16;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    for (std::size_t l = 0; l < L; ++l) { acc[l] += a[i + l] * b[i + l]; }
  }
  for (std::size_t l = 0; i < n; ++i, ++l) { acc[l] += a[i] * b[i]; }
  T s = T(0);
  for (std::size_t l = 0; l < L; ++l) { s += acc[l]; }
  return s;
}

template <typename T>
T lane_sum(T const *a, std::size_t n)
{
  constexpr std::size_t L = 16;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    for (std::size_t l = 0; l < L; ++l) { acc[l] += a[i + l]; }
  }
  for (std::size_t l = 0; i < n; ++i, ++l) { acc[l] += a[i]; }
  T s = T(0);
  for (std::size_t l = 0; l < L; ++l) { s += acc[l]; }
  return s;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void conv2d_forward(std::span<const T> x,
                    int cin,
                    int h,
                    int w,
                    std::span<const T> weight,
                    std::span<const T> bias,
                    int cout,
                    int k,
                    std::span<T> y,
                    std::vector<T> &cols)
{
  im2col(x, cin, h, w, k, cols);
  int const hw = h * w;
  int const ck = cin * k * k;
  if (cout == 1) {
    // Eigen would dispatch a single output row to its alignment-peeling GEMV
    std::fill(y.begin(), y.begin() + hw, bias[0]);
    for (int c = 0; c < ck; ++c) {
      T const wc = weight[c];
      T const *src = cols.data() + std::size_t(c) * hw;
      T *dst = y.data();
#pragma omp simd
      for (int p = 0; p < hw; ++p) { dst[p] += wc * src[p]; }
    }
    return;
  }
  Eigen::Map<const RowMatrix<T>> W(weight.data(), cout, ck);
  Eigen::Map<const RowMatrix<T>> C(cols.data(), ck, hw);
  Eigen::Map<RowMatrix<T>> Y(y.data(), cout, hw);
  Y.noalias() = W * C;
  for (int o = 0; o < cout; ++o) { Y.row(o).array() += bias[o]; }
}

/// Accumulates into gweight/gbias; gx (if non-empty) is accumulated too.
template <typename T>
void conv2d_backward(std::span<const T> gy,
                     std::vector<T> const &cols,
                     int cin,
                     int h,
                     int w,
                     std::span<const T> weight,
                     int cout,
                     int k,
                     std::span<T> gx,
                     std::span<T> gweight,
                     std::span<T> gbias)
{
  int const hw = h * w;
  int const ck = cin * k * k;
  Eigen::Map<const RowMatrix<T>> GY(gy.data(), cout, hw);
  Eigen::Map<const RowMatrix<T>> C(cols.data(), ck, hw);
  if (!gweight.empty()) {
    if (cout == 1) {
#pragma omp parallel for schedule(static)
      for (int c = 0; c < ck; ++c) { gweight[c] += lane_dot(gy.data(), cols.data() + std::size_t(c) * hw, std::size_t(hw)); }
    } else {
      Eigen::Map<RowMatrix<T>> GW(gweight.data(), cout, ck);
      GW.noalias() += GY * C.transpose();
    }
  }
  if (!gbias.empty()) {
    for (int o = 0; o < cout; ++o) { gbias[o] += lane_sum(gy.data() + std::size_t(o) * hw, std::size_t(hw)); }
  }
  if (!gx.empty()) {
    Eigen::Map<const RowMatrix<T>> W(weight.data(), cout, ck);
    std::vector<T> gcols(std::size_t(ck) * hw);
    Eigen::Map<RowMatrix<T>> GC(gcols.data(), ck, hw);
    GC.noalias() = W.transpose() * GY;
    col2im<T>(gcols, cin, h, w, k, gx);
  }
}

} // namespace kernels
} // namespace lspd
