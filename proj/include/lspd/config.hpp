#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "lspd/linops.hpp"
#include "lspd/simdata.hpp"
#include "lspd/theory.hpp"
#include "lspd/train.hpp"
#include "lspd/unroll.hpp"

namespace lspd {

/// Raised for any schema violation; the CLI maps it to exit status 2.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct DatasetSection
{
  PhantomKind phantom = PhantomKind::ellipses;
  int count = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  bool with_truth = true;
  FbpFilter filter = FbpFilter::hann;
};

struct ModelSection
{
  UnrollConfig unroll;
  PartitionScheme partition = PartitionScheme::contiguous;
  std::uint64_t init_seed = 0;
  /// op_scale = 1 / ||A|| when true; otherwise unroll.op_scale is used as given.
  bool auto_op_scale = true;
};

struct TrainSection
{
  std::string mode = "supervised"; ///< supervised | ei
  TrainConfig cfg;
};

struct EvalSection
{
  std::string split = "test";
  int png_count = 4;          ///< reconstructions written as PNG per method
  std::uint64_t seed = 0;     ///< subset schedule seed for random schedules
};

struct AdaptSection
{
  std::string split = "test";
  int index = 0;
  /// Noise model of the adaptation input when it differs from training.
  std::optional<NoiseModel> noise;
};

/// One declarative document per run. Every section is optional and falls
/// back to defaults; unknown keys anywhere are rejected.
struct ExperimentConfig
{
  ScanGeometry geometry;
  NoiseModel noise;
  DatasetSection dataset;
  ModelSection model;
  TrainSection train;
  EvalSection eval;
  AdaptSection adapt;
  std::optional<TheoryScenario> theory;

  nlohmann::json to_json() const;
};

ExperimentConfig parse_config(nlohmann::json const &j);
/// Reads and validates a JSON file; all problems surface as ConfigError.
ExperimentConfig load_config(std::filesystem::path const &path);

DatasetSpec dataset_spec(ExperimentConfig const &cfg);

nlohmann::json to_json(UnrollConfig const &u);
nlohmann::json to_json(TrainConfig const &t);

} // namespace lspd
