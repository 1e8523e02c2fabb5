#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lspd/config.hpp"
#include "lspd/linops.hpp"
#include "lspd/simdata.hpp"
#include "lspd/unroll.hpp"

namespace lspd {

/// Projector for `geom`, partitioned into `subsets` angle blocks when
/// subsets > 1.
LinearOperator make_operator(ScanGeometry const &geom, int subsets,
                             PartitionScheme scheme = PartitionScheme::contiguous);

/// 1 / ||A||, the fixed scale applied to operator-derived network channels.
double default_op_scale(LinearOperator const &op);

/// A method in an evaluation table: a network, or the FBP baseline when
/// `net` is null.
struct Method
{
  std::string name;
  UnrolledNet const *net = nullptr;
};

struct EvalRow
{
  std::string method;
  int image = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double operator_calls = 0.0; ///< full-operator equivalents per reconstruction
};

struct EvalSummary
{
  std::string method;
  int count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double operator_calls = 0.0;
};

struct EvalTable
{
  std::vector<EvalRow> rows;

  /// Arithmetic means per method, in first-appearance order.
  std::vector<EvalSummary> summary() const;
  EvalSummary summary(std::string const &method) const;
  /// Per-image rows followed by one "mean" row per method.
  void write_csv(std::filesystem::path const &path) const;
};

/// Reconstructs every sample with every method and scores it against the
/// sample's truth. Samples are processed in parallel; each worker owns its
/// tapes. `outputs[method][image]` receives the reconstructions when given.
EvalTable evaluate(std::vector<Method> const &methods, LinearOperator const &op, std::vector<Sample> const &samples,
                   std::optional<std::uint64_t> seed = {}, std::vector<std::vector<Vec>> *outputs = nullptr);

/// 16-bit grayscale PNG; values are mapped linearly from [lo, hi] and clipped.
void write_png16(std::filesystem::path const &path, std::span<const float> image, int height, int width,
                 double lo = 0.0, double hi = 1.0);

/// Reads back a 16-bit grayscale PNG as values in [0, 1].
Vec read_png16(std::filesystem::path const &path, int *height, int *width);

/// Raw f32 image as a single array block (u32 ndim, u32 dims..., f32 payload).
void write_image_block(std::filesystem::path const &path, std::span<const float> image, int height, int width);

// ---------------------------------------------------------------------------
// CLI commands. Each writes its artifacts into `out` and returns a short
// human-readable summary.

struct CommandOptions
{
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<Variant> variant;
  std::vector<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> dataset;
  int index = 0;
};

/// Applies the command-line overrides (seed, variant) to a config.
ExperimentConfig apply_overrides(ExperimentConfig cfg, CommandOptions const &opt);

std::string cmd_simulate(ExperimentConfig const &cfg, CommandOptions const &opt);
std::string cmd_train(ExperimentConfig const &cfg, CommandOptions const &opt);
std::string cmd_reconstruct(ExperimentConfig const &cfg, CommandOptions const &opt);
std::string cmd_eval(ExperimentConfig const &cfg, CommandOptions const &opt);
std::string cmd_adapt(ExperimentConfig const &cfg, CommandOptions const &opt);
std::string cmd_theory(ExperimentConfig const &cfg, CommandOptions const &opt);

/// Network built from the config's model section, with op_scale resolved
/// against `op`.
UnrolledNet make_network(ExperimentConfig const &cfg, LinearOperator const &op);

} // namespace lspd
