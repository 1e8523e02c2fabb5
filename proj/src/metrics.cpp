#include "lspd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace lspd {

namespace {

template <typename T>
double data_range(std::span<const T> ref)
{
  if (ref.empty()) { throw std::invalid_argument("metric on empty image"); }
  auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
  double const r = double(*hi) - double(*lo);
  if (!(r > 0.0)) { throw std::invalid_argument("reference image is constant"); }
  return r;
}

template <typename T>
double psnr_impl(std::span<const T> x, std::span<const T> ref)
{
  if (x.size() != ref.size()) { throw std::invalid_argument("psnr: size mismatch"); }
  double const peak = data_range(ref);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const d = double(x[i]) - double(ref[i]);
    mse += d * d;
  }
  mse /= double(x.size());
  if (mse == 0.0) { return std::numeric_limits<double>::infinity(); }
  return 10.0 * std::log10(peak * peak / mse);
}

constexpr int kWin = 11;

std::vector<double> gaussian_window()
{
  std::vector<double> g(kWin);
  double s = 0.0;
  for (int k = 0; k < kWin; ++k) {
    double const t = k - kWin / 2;
    g[k] = std::exp(-t * t / (2.0 * 1.5 * 1.5));
    s += g[k];
  }
  for (auto &v : g) { v /= s; }
  return g;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> filter_valid(std::vector<double> const &img, int h, int w, std::vector<double> const &g)
{
  int const oh = h - kWin + 1;
  int const ow = w - kWin + 1;
  std::vector<double> tmp(std::size_t(h) * ow);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) { s += g[k] * img[std::size_t(i) * w + j + k]; }
      tmp[std::size_t(i) * ow + j] = s;
    }
  }
  std::vector<double> out(std::size_t(oh) * ow);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) { s += g[k] * tmp[std::size_t(i + k) * ow + j]; }
      out[std::size_t(i) * ow + j] = s;
    }
  }
  return out;
}

template <typename T>
double ssim_impl(std::span<const T> x, std::span<const T> ref, int h, int w)
{
  if (x.size() != ref.size() || x.size() != std::size_t(h) * w) { throw std::invalid_argument("ssim: size mismatch"); }
  if (h < kWin || w < kWin) { throw std::invalid_argument("ssim: image smaller than 11x11"); }
  double const L = data_range(ref);
  double const c1 = (0.01 * L) * (0.01 * L);
  double const c2 = (0.03 * L) * (0.03 * L);
  auto const g = gaussian_window();
  std::size_t const n = x.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = double(x[i]);
    b[i] = double(ref[i]);
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto const ma = filter_valid(a, h, w, g);
  auto const mb = filter_valid(b, h, w, g);
  auto const saa = filter_valid(aa, h, w, g);
  auto const sbb = filter_valid(bb, h, w, g);
  auto const sab = filter_valid(ab, h, w, g);
  double acc = 0.0;
  for (std::size_t k = 0; k < ma.size(); ++k) {
    double const va = saa[k] - ma[k] * ma[k];
    double const vb = sbb[k] - mb[k] * mb[k];
    double const cov = sab[k] - ma[k] * mb[k];
    acc += ((2.0 * ma[k] * mb[k] + c1) * (2.0 * cov + c2)) /
           ((ma[k] * ma[k] + mb[k] * mb[k] + c1) * (va + vb + c2));
  }
  return acc / double(ma.size());
}

} // namespace

double psnr(std::span<const float> x, std::span<const float> ref) { return psnr_impl(x, ref); }
double psnr(std::span<const double> x, std::span<const double> ref) { return psnr_impl(x, ref); }
double ssim(std::span<const float> x, std::span<const float> ref, int h, int w) { return ssim_impl(x, ref, h, w); }
double ssim(std::span<const double> x, std::span<const double> ref, int h, int w) { return ssim_impl(x, ref, h, w); }

} // namespace lspd
