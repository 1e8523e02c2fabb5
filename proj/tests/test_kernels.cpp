#include <doctest.h>

#include "lspd/kernels.hpp"
#include "lspd/linops.hpp"
#include "lspd/reference_kernels.hpp"
#include "test_util.hpp"

using namespace lspd;
using testutil::randn;

TEST_CASE("parallel spmv matches the serial reference")
{
  auto const op = assemble_projector(testutil::parallel_geometry(32, 24, 40));
  auto const x = randn(std::size_t(op.cols()), 1);
  Vec y(std::size_t(op.rows())), yr(y.size());
  kernels::spmv<float>(op.matrix(), x, y);
  reference::spmv<float>(op.matrix(), x, yr);
  CHECK(y == yr);

  auto const g = randn(std::size_t(op.rows()), 2);
  Vec a(std::size_t(op.cols())), ar(a.size());
  kernels::spmv<float>(op.matrix_transposed(), g, a);
  reference::spmv_transpose<float>(op.matrix(), g, ar);
  CHECK(testutil::rel_err(a, ar) <= 1e-6);
}

TEST_CASE("parallel convolution matches the serial reference")
{
  struct Case
  {
    int cin, cout, k, h, w;
  };
  for (auto c : {Case{1, 1, 3, 5, 6}, Case{3, 1, 5, 12, 9}, Case{2, 4, 5, 7, 7}, Case{16, 16, 5, 16, 16}, Case{4, 2, 1, 3, 3}}) {
    CAPTURE(c.cin);
    CAPTURE(c.cout);
    auto const x = randn(std::size_t(c.cin) * c.h * c.w, 3);
    auto const wt = randn(std::size_t(c.cout) * c.cin * c.k * c.k, 4, 0.2);
    auto const b = randn(std::size_t(c.cout), 5);
    Vec y(std::size_t(c.cout) * c.h * c.w), yr(y.size()), cols;
    kernels::conv2d_forward<float>(x, c.cin, c.h, c.w, wt, b, c.cout, c.k, y, cols);
    reference::conv2d_forward<float>(x, c.cin, c.h, c.w, wt, b, c.cout, c.k, yr);
    CHECK(testutil::rel_err(y, yr) <= 1e-5);

    auto const gy = randn(y.size(), 6);
    Vec gx(x.size()), gw(wt.size()), gb(b.size()), gxr(x.size()), gwr(wt.size()), gbr(b.size());
    kernels::conv2d_backward<float>(gy, cols, c.cin, c.h, c.w, wt, c.cout, c.k, gx, gw, gb);
    reference::conv2d_backward<float>(gy, x, c.cin, c.h, c.w, wt, c.cout, c.k, gxr, gwr, gbr);
    CHECK(testutil::rel_err(gx, gxr) <= 1e-5);
    CHECK(testutil::rel_err(gw, gwr) <= 1e-5);
    CHECK(testutil::rel_err(gb, gbr) <= 1e-5);
  }
}

TEST_CASE("lane reductions do not depend on buffer alignment")
{
  auto const a = randn(1037, 7);
  auto const b = randn(1037, 8);
  float const ref = kernels::lane_dot(a.data(), b.data(), a.size());
  for (int shift = 1; shift < 16; ++shift) {
    Vec a2(a.size() + std::size_t(shift)), b2(b.size() + std::size_t(shift));
    std::copy(a.begin(), a.end(), a2.begin() + shift);
    std::copy(b.begin(), b.end(), b2.begin() + shift);
    CHECK(kernels::lane_dot(a2.data() + shift, b2.data() + shift, a.size()) == ref);
  }
  double exact = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) { exact += double(a[i]) * double(b[i]); }
  CHECK(std::abs(ref - exact) <= 1e-4 * std::abs(exact) + 1e-4);
  CHECK(kernels::lane_sum(a.data(), 0) == 0.0f);
}
