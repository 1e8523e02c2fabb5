#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "lspd/simdata.hpp"
#include "test_util.hpp"

using namespace lspd;

namespace {

// Modified Shepp-Logan (Toft): intensity, a, b, x0, y0, phi in degrees.
constexpr double kToft[10][6] = {
  {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},          {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
  {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},      {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
  {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},         {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
  {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},       {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
  {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},     {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
};

double toft_value(double x, double y)
{
  double v = 0.0;
  for (auto const &e : kToft) {
    double const t = e[5] * std::acos(-1.0) / 180.0;
    double const px = (x - e[3]) * std::cos(t) + (y - e[4]) * std::sin(t);
    double const py = -(x - e[3]) * std::sin(t) + (y - e[4]) * std::cos(t);
    if ((px / e[1]) * (px / e[1]) + (py / e[2]) * (py / e[2]) <= 1.0) { v += e[0]; }
  }
  return std::clamp(v, 0.0, 1.0);
}

std::filesystem::path temp_path(std::string const &name)
{
  auto dir = std::filesystem::temp_directory_path() / "lspd_test_simdata";
  std::filesystem::create_directories(dir);
  return dir / name;
}

DatasetSpec small_spec(bool truth)
{
  DatasetSpec s;
  s.geometry = testutil::parallel_geometry(16, 8, 16);
  s.count = 6;
  s.seed = 11;
  s.val_fraction = 0.2;
  s.test_fraction = 0.2;
  s.with_truth = truth;
  return s;
}

} // namespace

TEST_CASE("phantoms are deterministic per seed")
{
  for (auto kind : {PhantomKind::ellipses, PhantomKind::shepp_logan}) {
    auto const a = make_phantom(kind, 32, 5);
    auto const b = make_phantom(kind, 32, 5);
    CHECK(a.image == b.image);
  }
  CHECK(make_phantom(PhantomKind::ellipses, 32, 5).image != make_phantom(PhantomKind::ellipses, 32, 6).image);
  CHECK_THROWS_AS(make_phantom(PhantomKind::ellipses, 7, 0), std::invalid_argument);
}

TEST_CASE("phantom values lie in [0, 1] with 3-8 ellipses")
{
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto const p = make_phantom(PhantomKind::ellipses, 32, seed);
    CHECK(p.ellipse_count >= 3);
    CHECK(p.ellipse_count <= 8);
    for (float v : p.image) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
}

TEST_CASE("shepp-logan matches the analytic ellipse sum")
{
  int const n = 64;
  auto const p = make_phantom(PhantomKind::shepp_logan, n, 0);
  // pixel (32, 32): centre at x = +0.5/32, y = -0.5/32 with row 0 on top
  double const h = 0.5 * n;
  auto centre = [&](int i, int j) { return toft_value((j + 0.5 - h) / h, (h - (i + 0.5)) / h); };
  CHECK(p.image[32 * n + 32] == doctest::Approx(centre(32, 32)).epsilon(1e-7));
  CHECK(centre(32, 32) == doctest::Approx(0.2).epsilon(1e-12));
  int mismatches = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (std::abs(p.image[i * n + j] - centre(i, j)) > 1e-6) { ++mismatches; }
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("noiseless measurement is the exact projection")
{
  auto const g = testutil::parallel_geometry(32, 20, 32);
  auto const op = assemble_projector(g);
  auto const ph = make_phantom(PhantomKind::shepp_logan, 32, 0);
  NoiseModel nm;
  nm.kind = NoiseKind::none;
  auto const b = simulate_measurement(ph.image, op, nm, 1);
  auto const ax = op.apply<double>(VecD(ph.image.begin(), ph.image.end()));
  for (std::size_t r = 0; r < b.size(); ++r) { REQUIRE(b[r] == float(ax[r])); }
}

TEST_CASE("high photon counts approach the line integrals")
{
  auto const g = testutil::parallel_geometry(64, 60, 64);
  auto const op = assemble_projector(g);
  auto const ph = make_phantom(PhantomKind::shepp_logan, 64, 0);
  NoiseModel nm;
  nm.I0 = 1e9;
  auto const b = simulate_measurement(ph.image, op, nm, 3);
  auto const ax = op.apply<double>(VecD(ph.image.begin(), ph.image.end()));
  double dev = 0.0, peak = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    dev = std::max(dev, std::abs(double(b[r]) - ax[r]));
    peak = std::max(peak, std::abs(ax[r]));
  }
  CHECK(dev / peak <= 1e-3);

  nm.I0 = 1e3;
  auto const low = simulate_measurement(ph.image, op, nm, 3);
  double dev_low = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r) { dev_low = std::max(dev_low, std::abs(double(low[r]) - ax[r])); }
  CHECK(dev_low > dev);
}

TEST_CASE("photon counts are unbiased on an empty ray")
{
  auto const g = testutil::parallel_geometry(8, 10, 10);
  auto const op = assemble_projector(g);
  Vec const zero(std::size_t(g.cols()), 0.0f);
  NoiseModel nm;
  nm.I0 = 1e4;
  double sum = 0.0;
  int draws = 0;
  for (std::uint64_t seed = 0; draws < 10000; ++seed) {
    auto const b = simulate_measurement(zero, op, nm, seed);
    for (float v : b) {
      sum += nm.I0 * std::exp(-nm.attenuation_scale * double(v));
      ++draws;
    }
  }
  CHECK(std::abs(sum / draws - nm.I0) <= 0.01 * nm.I0);
}

TEST_CASE("log linearisation inverts to integer clamped counts")
{
  auto const g = testutil::parallel_geometry(32, 30, 32);
  auto const op = assemble_projector(g);
  auto const ph = make_phantom(PhantomKind::ellipses, 32, 4);
  for (double I0 : {3.0, 1e2, 1e4}) {
    NoiseModel nm;
    nm.I0 = I0;
    auto const b = simulate_measurement(ph.image, op, nm, 9);
    for (float v : b) {
      double const c = I0 * std::exp(-nm.attenuation_scale * double(v));
      REQUIRE(c >= 1.0 - 1e-3);
      REQUIRE(std::abs(c - std::round(c)) <= 1e-2);
    }
  }
}

TEST_CASE("measurement errors")
{
  auto const g = testutil::parallel_geometry(8, 4, 8);
  auto const op = assemble_projector(g);
  Vec img(std::size_t(g.cols()), 0.5f);
  img[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH(simulate_measurement(img, op, NoiseModel{}, 0), "non-finite line integral");
  NoiseModel bad;
  bad.I0 = 0.0;
  CHECK_THROWS_AS(simulate_measurement(Vec(std::size_t(g.cols()), 0.0f), op, bad, 0), std::invalid_argument);
}

TEST_CASE("simulation is deterministic per seed")
{
  auto const spec = small_spec(true);
  auto const op = assemble_projector(spec.geometry);
  auto const a = build_dataset(spec, op);
  auto const b = build_dataset(spec, op);
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].b == b.items[i].b);
    CHECK(a.items[i].x0 == b.items[i].x0);
    CHECK(a.items[i].split == b.items[i].split);
  }
}

TEST_CASE("noise-free datasets are exactly consistent")
{
  auto spec = small_spec(true);
  spec.noise.kind = NoiseKind::none;
  auto const op = assemble_projector(spec.geometry);
  auto const ds = build_dataset(spec, op);
  for (auto const &s : ds.items) {
    auto const ax = op.apply<float>(*s.truth);
    CHECK(testutil::max_abs_diff(ax, s.b) == 0.0);
  }
}

TEST_CASE("dataset round trip is bitwise")
{
  auto const spec = small_spec(true);
  auto const op = assemble_projector(spec.geometry);
  auto const ds = build_dataset(spec, op);
  auto const path = temp_path("roundtrip.lspdds");
  save_dataset(ds, path);
  auto const back = load_dataset(path);
  CHECK(back.geometry == ds.geometry);
  CHECK(back.noise == ds.noise);
  CHECK(back.filter == ds.filter);
  CHECK(back.seed == ds.seed);
  REQUIRE(back.items.size() == ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(back.items[i].b == ds.items[i].b);
    CHECK(back.items[i].x0 == ds.items[i].x0);
    CHECK(back.items[i].truth == ds.items[i].truth);
    CHECK(back.items[i].split == ds.items[i].split);
  }
  CHECK(back.has_truth());
}

TEST_CASE("truncated and foreign files are rejected")
{
  auto const spec = small_spec(true);
  auto const op = assemble_projector(spec.geometry);
  auto const path = temp_path("truncated.lspdds");
  save_dataset(build_dataset(spec, op), path);
  auto const full = std::filesystem::file_size(path);
  for (auto keep : {full - 1, full / 2, std::uintmax_t(20), std::uintmax_t(4)}) {
    std::filesystem::copy_file(path, temp_path("cut.lspdds"), std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(temp_path("cut.lspdds"), keep);
    CHECK_THROWS_WITH(load_dataset(temp_path("cut.lspdds")), "unrecognized dataset file");
  }
  {
    std::ofstream os(temp_path("foreign.lspdds"), std::ios::binary);
    os << "NOTADATASETFILE_AT_ALL";
  }
  CHECK_THROWS_WITH(load_dataset(temp_path("foreign.lspdds")), "unrecognized dataset file");
}

TEST_CASE("measurement-only datasets carry no truth")
{
  auto const spec = small_spec(false);
  auto const op = assemble_projector(spec.geometry);
  auto const ds = build_dataset(spec, op);
  CHECK_FALSE(ds.has_truth());
  auto const path = temp_path("ei.lspdds");
  save_dataset(ds, path);
  auto const back = load_dataset(path);
  CHECK_FALSE(back.has_truth());
  for (auto const &s : back.items) { CHECK_FALSE(s.truth.has_value()); }
  auto const stripped = build_dataset(small_spec(true), op).without_truth();
  CHECK_FALSE(stripped.has_truth());
  CHECK(stripped.measurements("train").size() == stripped.split("train").size());
}
