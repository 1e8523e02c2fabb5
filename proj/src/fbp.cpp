#include "lspd/fbp.hpp"

#include <cmath>
#include <complex>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>

namespace lspd {

namespace {

std::mutex &fftw_planner_mutex()
{
  static std::mutex m;
  return m;
}

// Circular forward/inverse real FFTs of a fixed length. Plans are created
// under a lock (the FFTW planner is not thread-safe); execution is. Plans
// are alignment-agnostic so they can run on plain std::vector storage.
class RealFft
{
public:
  explicit RealFft(int n)
    : n_(n)
  {
    std::lock_guard lock(fftw_planner_mutex());
    double *in = fftw_alloc_real(std::size_t(n));
    fftw_complex *out = fftw_alloc_complex(std::size_t(n / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    inv_ = fftw_plan_dft_c2r_1d(n, out, in, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
  }
  ~RealFft()
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  RealFft(RealFft const &) = delete;
  RealFft &operator=(RealFft const &) = delete;

  void forward(double *in, fftw_complex *out) const { fftw_execute_dft_r2c(fwd_, in, out); }
  void inverse(fftw_complex *in, double *out) const { fftw_execute_dft_c2r(inv_, in, out); }

private:
  int n_;
  fftw_plan fwd_;
  fftw_plan inv_;
};

} // namespace

std::string to_string(FbpFilter f) { return f == FbpFilter::ramlak ? "ramlak" : "hann"; }

FbpFilter fbp_filter_from_string(std::string const &s)
{
  if (s == "ramlak") { return FbpFilter::ramlak; }
  if (s == "hann") { return FbpFilter::hann; }
  throw std::invalid_argument("unknown FBP filter: " + s);
}

FilteredBackprojection::FilteredBackprojection(ScanGeometry geom, FbpFilter filter)
  : geom_(std::move(geom))
  , filter_(filter)
{
  geom_.validate();
  if (geom_.mode == BeamMode::fan && std::abs(geom_.angle_range - 2.0 * kPi) > 1e-9) {
    throw std::invalid_argument("fan-beam FBP requires a full 2*pi scan");
  }
  padded_ = 64;
  while (padded_ < 2 * geom_.n_rays) { padded_ *= 2; }

  // Band-limited ramp: spatial Ram-Lak kernel on the detector grid,
  // transformed so that the circular convolution is exact.
  double const tau = geom_.spacing();
  std::vector<double> h(std::size_t(padded_), 0.0);
  h[0] = 1.0 / (4.0 * tau * tau);
  for (int k = 1; k <= padded_ / 2; ++k) {
    if (k % 2 == 1) {
      double const v = -1.0 / (k * k * kPi * kPi * tau * tau);
      h[k] = v;
      h[padded_ - k] = v;
    }
  }
  RealFft fft(padded_);
  std::vector<std::complex<double>> H(std::size_t(padded_ / 2 + 1));
  fft.forward(h.data(), reinterpret_cast<fftw_complex *>(H.data()));
  response_.resize(H.size());
  for (std::size_t k = 0; k < H.size(); ++k) {
    double w = 1.0;
    if (filter_ == FbpFilter::hann) { w = 0.5 * (1.0 + std::cos(2.0 * kPi * double(k) / padded_)); }
    // tau turns the discrete sum into the convolution integral
    response_[k] = H[k].real() * w * tau;
  }
}

void FilteredBackprojection::ramp_filter(std::vector<double> &sino) const
{
  int const R = geom_.n_rays;
  int const P = padded_;
  RealFft fft(P);
  std::vector<double> buf(static_cast<std::size_t>(P));
  std::vector<std::complex<double>> spec(std::size_t(P / 2 + 1));
  for (int a = 0; a < geom_.n_angles; ++a) {
    std::fill(buf.begin(), buf.end(), 0.0);
    std::copy_n(sino.begin() + std::ptrdiff_t(a) * R, R, buf.begin());
    fft.forward(buf.data(), reinterpret_cast<fftw_complex *>(spec.data()));
    for (std::size_t k = 0; k < spec.size(); ++k) { spec[k] *= response_[k]; }
    fft.inverse(reinterpret_cast<fftw_complex *>(spec.data()), buf.data());
    for (int r = 0; r < R; ++r) { sino[std::size_t(a) * R + r] = buf[r] / P; }
  }
}

void FilteredBackprojection::preweight(std::vector<double> &sino) const
{
  if (geom_.mode != BeamMode::fan) { return; }
  double const D = geom_.source_distance_px();
  for (int a = 0; a < geom_.n_angles; ++a) {
    for (int r = 0; r < geom_.n_rays; ++r) {
      double const u = geom_.ray_offset(r);
      sino[std::size_t(a) * geom_.n_rays + r] *= D / std::sqrt(D * D + u * u);
    }
  }
}

namespace {

// Detector sample position and backprojection weight of a pixel centre.
struct Tap
{
  int i0;
  double f;
  double w;
};

inline Tap pixel_tap(ScanGeometry const &g, double c, double s, double x, double y)
{
  double const du = g.spacing();
  double const centre = 0.5 * (g.n_rays - 1);
  double u, w = 1.0;
  if (g.mode == BeamMode::parallel) {
    u = x * c + y * s;
  } else {
    double const D = g.source_distance_px();
    double const L = D - (x * c + y * s);
    u = D * (-x * s + y * c) / L;
    double const U = L / D;
    w = 1.0 / (U * U);
  }
  double const pos = u / du + centre;
  double const fl = std::floor(pos);
  return {int(fl), pos - fl, w};
}

} // namespace

std::vector<double> FilteredBackprojection::backproject(std::vector<double> const &sino) const
{
  int const N = geom_.image_size;
  int const R = geom_.n_rays;
  double const scale = kPi / geom_.n_angles;
  std::vector<double> img(std::size_t(N) * N, 0.0);
  for (int a = 0; a < geom_.n_angles; ++a) {
    double const t = geom_.angle(a);
    double const c = std::cos(t);
    double const s = std::sin(t);
    double const *row = sino.data() + std::size_t(a) * R;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < N; ++i) {
      double const y = i + 0.5 - 0.5 * N;
      for (int j = 0; j < N; ++j) {
        double const x = j + 0.5 - 0.5 * N;
        Tap const tap = pixel_tap(geom_, c, s, x, y);
        double v = 0.0;
        if (tap.i0 >= 0 && tap.i0 < R) { v += (1.0 - tap.f) * row[tap.i0]; }
        if (tap.i0 + 1 >= 0 && tap.i0 + 1 < R) { v += tap.f * row[tap.i0 + 1]; }
        img[std::size_t(i) * N + j] += scale * tap.w * v;
      }
    }
  }
  return img;
}

std::vector<double> FilteredBackprojection::backproject_adjoint(std::vector<double> const &img) const
{
  int const N = geom_.image_size;
  int const R = geom_.n_rays;
  double const scale = kPi / geom_.n_angles;
  std::vector<double> sino(std::size_t(geom_.n_angles) * R, 0.0);
#pragma omp parallel for schedule(static)
  for (int a = 0; a < geom_.n_angles; ++a) {
    double const t = geom_.angle(a);
    double const c = std::cos(t);
    double const s = std::sin(t);
    double *row = sino.data() + std::size_t(a) * R;
    for (int i = 0; i < N; ++i) {
      double const y = i + 0.5 - 0.5 * N;
      for (int j = 0; j < N; ++j) {
        double const x = j + 0.5 - 0.5 * N;
        Tap const tap = pixel_tap(geom_, c, s, x, y);
        double const v = scale * tap.w * img[std::size_t(i) * N + j];
        if (tap.i0 >= 0 && tap.i0 < R) { row[tap.i0] += (1.0 - tap.f) * v; }
        if (tap.i0 + 1 >= 0 && tap.i0 + 1 < R) { row[tap.i0 + 1] += tap.f * v; }
      }
    }
  }
  return sino;
}

template <typename T>
std::vector<T> FilteredBackprojection::apply(std::span<const T> b) const
{
  if (b.size() != std::size_t(geom_.rows())) { throw std::invalid_argument("fbp: dimension mismatch"); }
  std::vector<double> sino(b.begin(), b.end());
  preweight(sino);
  ramp_filter(sino);
  auto img = backproject(sino);
  return std::vector<T>(img.begin(), img.end());
}

template <typename T>
std::vector<T> FilteredBackprojection::adjoint(std::span<const T> x) const
{
  if (x.size() != std::size_t(geom_.cols())) { throw std::invalid_argument("fbp adjoint: dimension mismatch"); }
  std::vector<double> img(x.begin(), x.end());
  auto sino = backproject_adjoint(img);
  ramp_filter(sino); // symmetric circulant, cropped: self-adjoint
  preweight(sino);
  return std::vector<T>(sino.begin(), sino.end());
}

template std::vector<float> FilteredBackprojection::apply(std::span<const float>) const;
template std::vector<double> FilteredBackprojection::apply(std::span<const double>) const;
template std::vector<float> FilteredBackprojection::adjoint(std::span<const float>) const;
template std::vector<double> FilteredBackprojection::adjoint(std::span<const double>) const;

Vec fbp(ScanGeometry const &geom, std::span<const float> b, FbpFilter filter)
{
  return FilteredBackprojection(geom, filter).apply<float>(b);
}

} // namespace lspd
