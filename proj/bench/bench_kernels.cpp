// Parallel kernels against their serial reference versions.
#include <random>

#include <benchmark/benchmark.h>

#include "lspd/kernels.hpp"
#include "lspd/linops.hpp"
#include "lspd/reference_kernels.hpp"

namespace {

lspd::LinearOperator const &projector()
{
  static auto const op = [] {
    lspd::ScanGeometry g;
    g.image_size = 64;
    g.n_angles = 60;
    g.n_rays = 64;
    return lspd::assemble_projector(g);
  }();
  return op;
}

std::vector<float> random_vector(std::size_t n, unsigned seed)
{
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (auto &x : v) { x = nd(rng); }
  return v;
}

void BM_spmv_parallel(benchmark::State &st)
{
  auto const &A = projector().matrix();
  auto const x = random_vector(std::size_t(A.cols), 1);
  std::vector<float> y(std::size_t(A.rows));
  for (auto _ : st) {
    lspd::kernels::spmv<float>(A, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_spmv_reference(benchmark::State &st)
{
  auto const &A = projector().matrix();
  auto const x = random_vector(std::size_t(A.cols), 1);
  std::vector<float> y(std::size_t(A.rows));
  for (auto _ : st) {
    lspd::reference::spmv<float>(A, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_adjoint_parallel(benchmark::State &st)
{
  auto const &At = projector().matrix_transposed();
  auto const y = random_vector(std::size_t(At.cols), 2);
  std::vector<float> x(std::size_t(At.rows));
  for (auto _ : st) {
    lspd::kernels::spmv<float>(At, y, x);
    benchmark::DoNotOptimize(x.data());
  }
}

void BM_adjoint_reference(benchmark::State &st)
{
  auto const &A = projector().matrix();
  auto const y = random_vector(std::size_t(A.rows), 2);
  std::vector<float> x(std::size_t(A.cols));
  for (auto _ : st) {
    lspd::reference::spmv_transpose<float>(A, y, x);
    benchmark::DoNotOptimize(x.data());
  }
}

constexpr int kH = 64, kW = 64, kK = 5;

void BM_conv_parallel(benchmark::State &st)
{
  int const cin = int(st.range(0)), cout = int(st.range(1));
  auto const x = random_vector(std::size_t(cin) * kH * kW, 3);
  auto const w = random_vector(std::size_t(cout) * cin * kK * kK, 4);
  auto const b = random_vector(std::size_t(cout), 5);
  std::vector<float> y(std::size_t(cout) * kH * kW), cols;
  for (auto _ : st) {
    lspd::kernels::conv2d_forward<float>(x, cin, kH, kW, w, b, cout, kK, y, cols);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_conv_reference(benchmark::State &st)
{
  int const cin = int(st.range(0)), cout = int(st.range(1));
  auto const x = random_vector(std::size_t(cin) * kH * kW, 3);
  auto const w = random_vector(std::size_t(cout) * cin * kK * kK, 4);
  auto const b = random_vector(std::size_t(cout), 5);
  std::vector<float> y(std::size_t(cout) * kH * kW);
  for (auto _ : st) {
    lspd::reference::conv2d_forward<float>(x, cin, kH, kW, w, b, cout, kK, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_conv_backward_parallel(benchmark::State &st)
{
  int const cin = int(st.range(0)), cout = int(st.range(1));
  auto const x = random_vector(std::size_t(cin) * kH * kW, 3);
  auto const w = random_vector(std::size_t(cout) * cin * kK * kK, 4);
  auto const b = random_vector(std::size_t(cout), 5);
  auto const gy = random_vector(std::size_t(cout) * kH * kW, 6);
  std::vector<float> y(std::size_t(cout) * kH * kW), cols;
  lspd::kernels::conv2d_forward<float>(x, cin, kH, kW, w, b, cout, kK, y, cols);
  std::vector<float> gx(x.size()), gw(w.size()), gb(b.size());
  for (auto _ : st) {
    lspd::kernels::conv2d_backward<float>(gy, cols, cin, kH, kW, w, cout, kK, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
}

void BM_conv_backward_reference(benchmark::State &st)
{
  int const cin = int(st.range(0)), cout = int(st.range(1));
  auto const x = random_vector(std::size_t(cin) * kH * kW, 3);
  auto const w = random_vector(std::size_t(cout) * cin * kK * kK, 4);
  auto const gy = random_vector(std::size_t(cout) * kH * kW, 6);
  std::vector<float> gx(x.size()), gw(w.size()), gb(static_cast<std::size_t>(cout));
  for (auto _ : st) {
    lspd::reference::conv2d_backward<float>(gy, x, cin, kH, kW, w, cout, kK, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
}

} // namespace

BENCHMARK(BM_spmv_parallel);
BENCHMARK(BM_spmv_reference);
BENCHMARK(BM_adjoint_parallel);
BENCHMARK(BM_adjoint_reference);
BENCHMARK(BM_conv_parallel)->Args({3, 16})->Args({16, 16});
BENCHMARK(BM_conv_reference)->Args({3, 16})->Args({16, 16});
BENCHMARK(BM_conv_backward_parallel)->Args({3, 16})->Args({16, 16});
BENCHMARK(BM_conv_backward_reference)->Args({3, 16})->Args({16, 16});

BENCHMARK_MAIN();
