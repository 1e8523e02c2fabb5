#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lspd/autodiff.hpp"
#include "lspd/checkpoint.hpp"
#include "lspd/linops.hpp"
#include "lspd/manifold.hpp"
#include "lspd/solvers.hpp"

namespace lspd {

enum class Variant
{
  lpd,       ///< full-batch learned primal-dual
  lspd,      ///< one angle subset per layer
  lspd_vr,   ///< lspd with per-subset adjoint memories summed in the primal step
  simplified ///< gradient step on one subset followed by a shared learned projector
};

std::string to_string(Variant v);
Variant variant_from_string(std::string const &s);

struct UnrollConfig
{
  Variant variant = Variant::lspd;
  int layers = 6;
  int subsets = 4;
  int hidden = 16;
  int kernel = 5;
  SubsetSchedule schedule = SubsetSchedule::cyclic;
  /// Zero the dual buffer at every layer instead of carrying it across
  /// subset switches.
  bool reset_dual = false;
  /// Fixed factor applied to operator-derived channels; 1 / ||A|| keeps them
  /// at image scale.
  double op_scale = 1.0;
  double prelu_init = 0.25;

  void validate() const;
  /// Subsets actually used: 1 for lpd.
  int effective_subsets() const { return variant == Variant::lpd ? 1 : subsets; }
};

struct ForwardOptions
{
  std::optional<std::uint64_t> seed; ///< required for the uniform_random schedule
  /// Record parameters as differentiable leaves; off for plain inference.
  bool track_params = true;
  /// lspd_vr: receives ||h_j|| for every memory after the last layer.
  std::vector<double> *memory_norms = nullptr;
};

/// Unrolled reconstruction network. Parameters live in a named ParamSet so
/// that variants share names where their graphs coincide:
///   layer{k}.dual.conv{1,2,3}.{weight,bias}, layer{k}.dual.prelu{1,2}.alpha,
///   layer{k}.primal.*, layer{k}.sigma, layer{k}.tau
/// and, for the simplified variant, primal.* and tau.
class UnrolledNet
{
public:
  UnrolledNet(UnrollConfig cfg, std::uint64_t init_seed);
  UnrolledNet(UnrollConfig cfg, ad::ParamSet<float> params);

  static UnrolledNet from_checkpoint(Checkpoint const &ck);
  Checkpoint to_checkpoint() const;

  UnrollConfig const &config() const { return cfg_; }
  ad::ParamSet<float> &params() { return params_; }
  ad::ParamSet<float> const &params() const { return params_; }

  /// Subset used by each layer (-1 = full operator).
  std::vector<int> subset_sequence(std::optional<std::uint64_t> seed) const;

  /// Records the network on `tape` using `params` (which must carry this
  /// network's names; any precision). The operator must carry a partition
  /// with config().subsets blocks for the stochastic variants, or m = 1.
  template <typename T>
  ad::Var<T> forward(ad::Tape<T> &tape, ad::ParamSet<T> &params, LinearOperator const &op, ad::Var<T> b,
                     ad::Var<T> x0, ForwardOptions const &opt = {},
                     std::vector<std::vector<T>> *snapshots = nullptr) const;

  /// Inference without gradients.
  Vec reconstruct(LinearOperator const &op, std::span<const float> b, std::span<const float> x0,
                  ForwardOptions const &opt = {}, CallCounter *counter = nullptr,
                  std::vector<Vec> *snapshots = nullptr) const;

private:
  void init_params(std::uint64_t seed);
  void check_params() const;

  UnrollConfig cfg_;
  ad::ParamSet<float> params_;
};

/// Builds the ParamSet layout for a config with every weight zero.
ad::ParamSet<float> zero_params(UnrollConfig const &cfg);

struct SimplifiedTrace
{
  VecD x;
  std::vector<VecD> iterates; ///< x_0..x_K
  std::vector<int> subsets;
};

/// Learning-free simplified recursion on a partitioned operator:
///   i ~ uniform{0..m-1};  y = S_iA x - S_ib;  x = P(x - tau (S_iA)^T y)
/// with P the model's (epsilon-perturbed) projection.
SimplifiedTrace simplified_lspd_forward(ManifoldModel const &proj, LinearOperator const &op,
                                        std::span<const double> b, std::span<const double> x0, double tau, int K,
                                        std::uint64_t seed, SubsetSchedule schedule = SubsetSchedule::uniform_random,
                                        CallCounter *counter = nullptr);

} // namespace lspd
