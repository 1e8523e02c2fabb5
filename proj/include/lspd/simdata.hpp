#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lspd/common.hpp"
#include "lspd/fbp.hpp"
#include "lspd/linops.hpp"

namespace lspd {

enum class PhantomKind
{
  ellipses,
  shepp_logan
};

std::string to_string(PhantomKind k);
PhantomKind phantom_kind_from_string(std::string const &s);

struct Phantom
{
  Vec image; ///< row-major size x size, values in [0, 1]
  int size = 0;
  PhantomKind kind = PhantomKind::ellipses;
  std::uint64_t seed = 0;
  int ellipse_count = 0;
};

struct Ellipse
{
  double value; ///< additive intensity
  double a, b;  ///< semi-axes, fraction of the half width
  double x0, y0; ///< centre, fraction of the half width
  double phi;   ///< rotation in degrees
};

/// Modified Shepp-Logan table (Toft's contrast-enhanced intensities).
std::vector<Ellipse> shepp_logan_ellipses();
/// Sum of ellipse indicators at a point in normalised coordinates [-1, 1]^2
/// (y up).
double ellipse_sum(std::vector<Ellipse> const &es, double x, double y);

/// ellipses: 3-8 random ellipses, intensities summed then clipped to [0, 1];
/// shepp_logan: the modified table sampled at pixel centres. Deterministic
/// per seed.
Phantom make_phantom(PhantomKind kind, int size, std::uint64_t seed);

enum class NoiseKind
{
  none,
  poisson_beer_lambert,
  gaussian
};

std::string to_string(NoiseKind k);
NoiseKind noise_kind_from_string(std::string const &s);

struct NoiseModel
{
  NoiseKind kind = NoiseKind::poisson_beer_lambert;
  double I0 = 1e4;                ///< incident photons per ray
  double sigma = 0.0;             ///< gaussian kind only
  double attenuation_scale = 0.1; ///< attenuation per pixel length of a unit-valued pixel

  void validate() const;
  bool operator==(NoiseModel const &) const = default;
};

/// Beer-Lambert: c ~ Poisson(I0 exp(-mu A x)), c clamped to >= 1,
/// b = -log(c / I0) / mu, so b estimates the line integrals A x.
/// kind = none returns A x exactly.
Vec simulate_measurement(std::span<const float> image, LinearOperator const &op, NoiseModel const &noise,
                         std::uint64_t seed);

/// One training/evaluation item. `truth` is absent in measurement-only sets.
struct Sample
{
  Vec b;
  Vec x0; ///< FBP of b
  std::optional<Vec> truth;
  std::string split = "train";
};

/// Ground-truth-free view used by self-supervised training. The type has
/// no field that could carry a reference image.
struct Measurement
{
  Vec b;
  Vec x0;
};

struct Dataset
{
  ScanGeometry geometry;
  NoiseModel noise;
  FbpFilter filter = FbpFilter::hann;
  std::uint64_t seed = 0;
  std::vector<Sample> items;

  bool has_truth() const;
  std::vector<Sample> split(std::string const &tag) const;
  std::vector<Measurement> measurements(std::string const &tag) const;
  /// Copy with every ground-truth image removed.
  Dataset without_truth() const;
};

struct DatasetSpec
{
  ScanGeometry geometry;
  NoiseModel noise;
  FbpFilter filter = FbpFilter::hann;
  PhantomKind phantom = PhantomKind::ellipses;
  int count = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.0;
  bool with_truth = true;
};

/// Items i use phantom seed `seed + i` and noise seed `seed + i + 1e6`; the
/// split assignment is a seeded permutation.
Dataset build_dataset(DatasetSpec const &spec, LinearOperator const &op);

/// "LSPDDS01", u32 version, u64 header length, JSON header, then for each item
/// the array blocks b, x0 and (if present) truth as u32 ndim, u32 dims...,
/// f32 payload. The write is atomic.
void save_dataset(Dataset const &ds, std::filesystem::path const &path);
/// Throws std::runtime_error("unrecognized dataset file") on a bad magic,
/// version or a truncated file.
Dataset load_dataset(std::filesystem::path const &path);

nlohmann::json to_json(ScanGeometry const &g);
ScanGeometry geometry_from_json(nlohmann::json const &j);
nlohmann::json to_json(NoiseModel const &n);
NoiseModel noise_from_json(nlohmann::json const &j);

} // namespace lspd
