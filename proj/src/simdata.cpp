#include "lspd/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "lspd/binary_io.hpp"

namespace lspd {

std::string to_string(PhantomKind k) { return k == PhantomKind::ellipses ? "ellipses" : "shepp_logan"; }

PhantomKind phantom_kind_from_string(std::string const &s)
{
  if (s == "ellipses") { return PhantomKind::ellipses; }
  if (s == "shepp_logan") { return PhantomKind::shepp_logan; }
  throw std::invalid_argument("unknown phantom kind: " + s);
}

std::vector<Ellipse> shepp_logan_ellipses()
{
  return {
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
  };
}

double ellipse_sum(std::vector<Ellipse> const &es, double x, double y)
{
  double v = 0.0;
  for (auto const &e : es) {
    double const p = e.phi * kPi / 180.0;
    double const dx = x - e.x0;
    double const dy = y - e.y0;
    double const u = dx * std::cos(p) + dy * std::sin(p);
    double const w = -dx * std::sin(p) + dy * std::cos(p);
    if (u * u / (e.a * e.a) + w * w / (e.b * e.b) <= 1.0) { v += e.value; }
  }
  return v;
}

namespace {

Vec rasterize(std::vector<Ellipse> const &es, int n)
{
  // row 0 is the top of the image (y = +1)
  Vec img(static_cast<std::size_t>(n) * n);
  double const h = 0.5 * n;
  for (int i = 0; i < n; ++i) {
    double const y = (h - (i + 0.5)) / h;
    for (int j = 0; j < n; ++j) {
      double const x = (j + 0.5 - h) / h;
      img[std::size_t(i) * n + j] = float(std::clamp(ellipse_sum(es, x, y), 0.0, 1.0));
    }
  }
  return img;
}

} // namespace

Phantom make_phantom(PhantomKind kind, int size, std::uint64_t seed)
{
  if (size < 8) { throw std::invalid_argument("phantom size must be >= 8"); }
  Phantom ph;
  ph.size = size;
  ph.kind = kind;
  ph.seed = seed;
  if (kind == PhantomKind::shepp_logan) {
    auto const es = shepp_logan_ellipses();
    ph.ellipse_count = int(es.size());
    ph.image = rasterize(es, size);
    return ph;
  }
  std::mt19937_64 rng(seed);
  auto U = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  int const count = std::uniform_int_distribution<int>(3, 8)(rng);
  std::vector<Ellipse> es;
  // a body ellipse, then inserts inside it
  es.push_back({U(0.2, 0.6), U(0.6, 0.85), U(0.6, 0.85), U(-0.05, 0.05), U(-0.05, 0.05), U(0.0, 180.0)});
  for (int k = 1; k < count; ++k) {
    double const r = U(0.0, 0.5);
    double const t = U(0.0, 2.0 * kPi);
    es.push_back({U(-0.3, 0.5), U(0.05, 0.35), U(0.05, 0.35), r * std::cos(t), r * std::sin(t), U(0.0, 180.0)});
  }
  ph.ellipse_count = count;
  ph.image = rasterize(es, size);
  return ph;
}

std::string to_string(NoiseKind k)
{
  switch (k) {
  case NoiseKind::none: return "none";
  case NoiseKind::poisson_beer_lambert: return "poisson_beer_lambert";
  case NoiseKind::gaussian: return "gaussian";
  }
  return "?";
}

NoiseKind noise_kind_from_string(std::string const &s)
{
  if (s == "none") { return NoiseKind::none; }
  if (s == "poisson_beer_lambert" || s == "poisson") { return NoiseKind::poisson_beer_lambert; }
  if (s == "gaussian") { return NoiseKind::gaussian; }
  throw std::invalid_argument("unknown noise kind: " + s);
}

void NoiseModel::validate() const
{
  if (!(I0 > 0.0) || !std::isfinite(I0)) { throw std::invalid_argument("I0 must be positive"); }
  if (!(attenuation_scale > 0.0)) { throw std::invalid_argument("attenuation_scale must be positive"); }
  if (sigma < 0.0) { throw std::invalid_argument("noise sigma must be nonnegative"); }
}

Vec simulate_measurement(std::span<const float> image, LinearOperator const &op, NoiseModel const &noise,
                         std::uint64_t seed)
{
  noise.validate();
  VecD const x(image.begin(), image.end());
  auto const line = op.apply<double>(std::span<const double>(x));
  for (double v : line) {
    if (!std::isfinite(v)) { throw std::runtime_error("non-finite line integral"); }
  }
  Vec b(line.size());
  std::mt19937_64 rng(seed);
  switch (noise.kind) {
  case NoiseKind::none:
    std::transform(line.begin(), line.end(), b.begin(), [](double v) { return float(v); });
    break;
  case NoiseKind::gaussian: {
    std::normal_distribution<double> nd(0.0, noise.sigma);
    for (std::size_t r = 0; r < b.size(); ++r) { b[r] = float(line[r] + nd(rng)); }
    break;
  }
  case NoiseKind::poisson_beer_lambert: {
    double const mu = noise.attenuation_scale;
    for (std::size_t r = 0; r < b.size(); ++r) {
      std::poisson_distribution<long long> pd(noise.I0 * std::exp(-mu * line[r]));
      long long const c = std::max<long long>(1, pd(rng));
      b[r] = float(-std::log(double(c) / noise.I0) / mu);
    }
    break;
  }
  }
  return b;
}

bool Dataset::has_truth() const
{
  return !items.empty() && std::all_of(items.begin(), items.end(), [](Sample const &s) { return s.truth.has_value(); });
}

std::vector<Sample> Dataset::split(std::string const &tag) const
{
  std::vector<Sample> out;
  for (auto const &s : items) {
    if (s.split == tag) { out.push_back(s); }
  }
  return out;
}

std::vector<Measurement> Dataset::measurements(std::string const &tag) const
{
  std::vector<Measurement> out;
  for (auto const &s : items) {
    if (s.split == tag) { out.push_back({s.b, s.x0}); }
  }
  return out;
}

Dataset Dataset::without_truth() const
{
  Dataset d = *this;
  for (auto &s : d.items) { s.truth.reset(); }
  return d;
}

Dataset build_dataset(DatasetSpec const &spec, LinearOperator const &op)
{
  spec.geometry.validate();
  spec.noise.validate();
  if (spec.count < 1) { throw std::invalid_argument("dataset count must be >= 1"); }
  if (op.rows() != spec.geometry.rows() || op.cols() != spec.geometry.cols()) {
    throw std::invalid_argument("operator does not match dataset geometry");
  }
  Dataset ds;
  ds.geometry = spec.geometry;
  ds.noise = spec.noise;
  ds.filter = spec.filter;
  ds.seed = spec.seed;
  ds.items.resize(std::size_t(spec.count));
  FilteredBackprojection const F(spec.geometry, spec.filter);

  std::vector<int> perm(std::size_t(spec.count));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 split_rng(spec.seed ^ 0x5b1u);
  std::shuffle(perm.begin(), perm.end(), split_rng);
  int const n_val = int(std::lround(spec.count * spec.val_fraction));
  int const n_test = int(std::lround(spec.count * spec.test_fraction));
  for (int k = 0; k < spec.count; ++k) {
    ds.items[perm[k]].split = k < n_val ? "val" : (k < n_val + n_test ? "test" : "train");
  }

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < spec.count; ++i) {
    auto const ph = make_phantom(spec.phantom, spec.geometry.image_size, spec.seed + std::uint64_t(i));
    auto &s = ds.items[i];
    s.b = simulate_measurement(ph.image, op, spec.noise, spec.seed + std::uint64_t(i) + 1000000u);
    s.x0 = F.apply<float>(s.b);
    if (spec.with_truth) { s.truth = ph.image; }
  }
  return ds;
}

nlohmann::json to_json(ScanGeometry const &g)
{
  return {{"mode", to_string(g.mode)},
          {"image_size", g.image_size},
          {"n_angles", g.n_angles},
          {"n_rays", g.n_rays},
          {"angle_range", g.angle_range},
          {"source_distance", g.source_distance},
          {"detector_spacing", g.detector_spacing}};
}

ScanGeometry geometry_from_json(nlohmann::json const &j)
{
  ScanGeometry g;
  g.mode = beam_mode_from_string(j.value("mode", to_string(g.mode)));
  g.image_size = j.value("image_size", g.image_size);
  g.n_angles = j.value("n_angles", g.n_angles);
  g.n_rays = j.value("n_rays", g.n_rays);
  g.angle_range = j.value("angle_range", g.angle_range);
  g.source_distance = j.value("source_distance", g.source_distance);
  g.detector_spacing = j.value("detector_spacing", g.detector_spacing);
  return g;
}

nlohmann::json to_json(NoiseModel const &n)
{
  return {{"kind", to_string(n.kind)}, {"I0", n.I0}, {"sigma", n.sigma}, {"attenuation_scale", n.attenuation_scale}};
}

NoiseModel noise_from_json(nlohmann::json const &j)
{
  NoiseModel n;
  n.kind = noise_kind_from_string(j.value("kind", to_string(n.kind)));
  n.I0 = j.value("I0", n.I0);
  n.sigma = j.value("sigma", n.sigma);
  n.attenuation_scale = j.value("attenuation_scale", n.attenuation_scale);
  return n;
}

namespace {
constexpr char kMagic[8] = {'L', 'S', 'P', 'D', 'D', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr char const *kBad = "unrecognized dataset file";
} // namespace

void save_dataset(Dataset const &ds, std::filesystem::path const &path)
{
  nlohmann::json header = {{"geometry", to_json(ds.geometry)},
                           {"noise", to_json(ds.noise)},
                           {"filter", to_string(ds.filter)},
                           {"seed", ds.seed},
                           {"count", ds.items.size()}};
  nlohmann::json items = nlohmann::json::array();
  for (auto const &s : ds.items) { items.push_back({{"split", s.split}, {"truth", s.truth.has_value()}}); }
  header["items"] = items;
  std::string const hs = header.dump();
  io::atomic_write(path, [&](std::ostream &os) {
    os.write(kMagic, sizeof kMagic);
    io::write_u32(os, kVersion);
    io::write_u64(os, hs.size());
    io::write_bytes(os, hs);
    auto const &g = ds.geometry;
    std::uint32_t const sino[2] = {std::uint32_t(g.n_angles), std::uint32_t(g.n_rays)};
    std::uint32_t const img[2] = {std::uint32_t(g.image_size), std::uint32_t(g.image_size)};
    for (auto const &s : ds.items) {
      io::write_array(os, sino, s.b);
      io::write_array(os, img, s.x0);
      if (s.truth) { io::write_array(os, img, *s.truth); }
    }
  });
}

Dataset load_dataset(std::filesystem::path const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) { throw std::runtime_error("cannot open dataset " + path.string()); }
  if (io::read_bytes(is, sizeof kMagic, kBad) != std::string(kMagic, sizeof kMagic)) { throw std::runtime_error(kBad); }
  if (io::read_u32(is, kBad) != kVersion) { throw std::runtime_error(kBad); }
  std::uint64_t const hlen = io::read_u64(is, kBad);
  if (hlen > (1u << 26)) { throw std::runtime_error(kBad); }
  Dataset ds;
  nlohmann::json header;
  nlohmann::json items;
  try {
    header = nlohmann::json::parse(io::read_bytes(is, std::size_t(hlen), kBad));
    ds.geometry = geometry_from_json(header.at("geometry"));
    ds.noise = noise_from_json(header.at("noise"));
    ds.filter = fbp_filter_from_string(header.at("filter").get<std::string>());
    ds.seed = header.at("seed").get<std::uint64_t>();
    items = header.at("items");
    for (auto const &it : items) {
      (void)it.at("split").get<std::string>();
      (void)it.at("truth").get<bool>();
    }
  } catch (nlohmann::json::exception const &) {
    throw std::runtime_error(kBad);
  }
  std::size_t const nb = std::size_t(ds.geometry.rows());
  std::size_t const ni = std::size_t(ds.geometry.cols());
  for (auto const &it : items) {
    Sample s;
    s.split = it.at("split").get<std::string>();
    auto b = io::read_array(is, kBad);
    auto x0 = io::read_array(is, kBad);
    if (b.data.size() != nb || x0.data.size() != ni) { throw std::runtime_error(kBad); }
    s.b = std::move(b.data);
    s.x0 = std::move(x0.data);
    if (it.at("truth").get<bool>()) {
      auto t = io::read_array(is, kBad);
      if (t.data.size() != ni) { throw std::runtime_error(kBad); }
      s.truth = std::move(t.data);
    }
    ds.items.push_back(std::move(s));
  }
  return ds;
}

} // namespace lspd
