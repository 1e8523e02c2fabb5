#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace lspd {

using Vec = std::vector<float>;
using VecD = std::vector<double>;

inline constexpr double kPi = std::numbers::pi;

/// Counts rows pushed through a measurement operator so that cost can be
/// reported in full-operator equivalents (one full A or A^T application = 1).
struct CallCounter
{
  std::int64_t forward_rows = 0;
  std::int64_t adjoint_rows = 0;
  std::int64_t rows_per_call = 0; // n of the full operator

  void add_forward(std::int64_t rows) { forward_rows += rows; }
  void add_adjoint(std::int64_t rows) { adjoint_rows += rows; }

  double forward_equivalents() const
  {
    return rows_per_call ? double(forward_rows) / double(rows_per_call) : 0.0;
  }
  double adjoint_equivalents() const
  {
    return rows_per_call ? double(adjoint_rows) / double(rows_per_call) : 0.0;
  }
  double total_equivalents() const { return forward_equivalents() + adjoint_equivalents(); }
  void reset() { forward_rows = adjoint_rows = 0; }
};

template <typename T>
double dot(std::span<const T> a, std::span<const T> b)
{
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { s += double(a[i]) * double(b[i]); }
  return s;
}

template <typename T>
double norm2(std::span<const T> a)
{
  return std::sqrt(dot(a, a));
}

} // namespace lspd
