#pragma once

// Serial, loop-for-loop versions of the kernels in kernels.hpp. Kept for
// testing and as the baseline in bench/.

#include <span>

#include "lspd/kernels.hpp"

namespace lspd::reference {

template <typename T>
void spmv(SparseMatrix const &A, std::span<const T> x, std::span<T> y)
{
  for (int r = 0; r < A.rows; ++r) {
    double acc = 0.0;
    for (std::int64_t k = A.row_ptr[r]; k < A.row_ptr[r + 1]; ++k) {
      acc += double(A.values[k]) * double(x[A.col_idx[k]]);
    }
    y[r] = T(acc);
  }
}

/// x = A^T y by scattering each row; does not need the transposed matrix.
template <typename T>
void spmv_transpose(SparseMatrix const &A, std::span<const T> y, std::span<T> x)
{
  std::vector<double> acc(std::size_t(A.cols), 0.0);
  for (int r = 0; r < A.rows; ++r) {
    for (std::int64_t k = A.row_ptr[r]; k < A.row_ptr[r + 1]; ++k) {
      acc[A.col_idx[k]] += double(A.values[k]) * double(y[r]);
    }
  }
  for (int c = 0; c < A.cols; ++c) { x[c] = T(acc[c]); }
}

template <typename T>
void conv2d_forward(std::span<const T> x,
                    int cin,
                    int h,
                    int w,
                    std::span<const T> weight,
                    std::span<const T> bias,
                    int cout,
                    int k,
                    std::span<T> y)
{
  int const pad = k / 2;
  for (int o = 0; o < cout; ++o) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        double acc = bias[o];
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              int const si = i + ky - pad;
              int const sj = j + kx - pad;
              if (si < 0 || si >= h || sj < 0 || sj >= w) { continue; }
              acc += double(weight[((o * cin + c) * k + ky) * k + kx]) * double(x[(c * h + si) * w + sj]);
            }
          }
        }
        y[(o * h + i) * w + j] = T(acc);
      }
    }
  }
}

template <typename T>
void conv2d_backward(std::span<const T> gy,
                     std::span<const T> x,
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
  int const pad = k / 2;
  for (int o = 0; o < cout; ++o) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        T const g = gy[(o * h + i) * w + j];
        gbias[o] += g;
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              int const si = i + ky - pad;
              int const sj = j + kx - pad;
              if (si < 0 || si >= h || sj < 0 || sj >= w) { continue; }
              std::size_t const wi = ((o * cin + c) * k + ky) * k + kx;
              std::size_t const xi = (c * h + si) * w + sj;
              gweight[wi] += g * x[xi];
              gx[xi] += g * weight[wi];
            }
          }
        }
      }
    }
  }
}

} // namespace lspd::reference
