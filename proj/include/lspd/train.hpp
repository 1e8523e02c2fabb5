#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lspd/autodiff.hpp"
#include "lspd/linops.hpp"
#include "lspd/simdata.hpp"
#include "lspd/unroll.hpp"

namespace lspd {

struct AdamConfig
{
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState
{
  AdamConfig cfg;
  std::int64_t t = 0;
  std::map<std::string, std::vector<double>> m; ///< first moments, by parameter name
  std::map<std::string, std::vector<double>> v; ///< second moments
};

/// One bias-corrected Adam update from the gradients stored in `params`.
/// A non-finite gradient throws std::runtime_error("gradient blow-up: ...")
/// before any parameter changes. `lr_scale` multiplies the learning rate.
template <typename T>
void adam_step(ad::ParamSet<T> &params, AdamState &state, double lr_scale = 1.0);

struct TrainConfig
{
  int epochs = 10;
  double lr = 1e-3;
  bool cosine_decay = false;
  double lambda_ei = 100.0;   ///< equivariance weight for unsupervised training
  double lambda_adapt = 1.0;  ///< equivariance weight for instance adaptation
  double adapt_lr = 1e-4;     ///< Adam step size for instance adaptation
  int adapt_steps = 30;
  bool freeze_dual = false;   ///< adaptation: keep dual subnets fixed
  std::uint64_t seed = 0;
  int checkpoint_every = 0;   ///< epochs; 0 disables
  std::filesystem::path out_dir;

  void validate() const;
};

struct EpochRecord
{
  int epoch = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0; ///< NaN when the validation split has no ground truth
  double val_ssim = 0.0;
  double operator_calls = 0.0; ///< cumulative full-operator equivalents spent on training
};

struct TrainResult
{
  std::vector<EpochRecord> epochs;
  void write_csv(std::filesystem::path const &path) const;
};

using EpochCallback = std::function<void(EpochRecord const &, UnrolledNet const &)>;

/// Minimises mean((F(b, x0) - truth)^2) over `train`, one sample per step.
TrainResult supervised_train(UnrolledNet &net, LinearOperator const &op, std::vector<Sample> const &train,
                             std::vector<Sample> const &val, TrainConfig const &cfg, EpochCallback const &cb = {});

/// Exact rotation by g quarter turns of a square image.
Vec apply_group_action(std::span<const float> x, int size, int quarter_turns);

/// Measurement-consistency plus equivariance objective on one measurement:
///   ||b - A F(b)||^2 / d + lambda ||T_g F(b) - F(A T_g F(b))||^2 / d
/// where d is the pixel count. Records on `tape` and returns the loss; `out`
/// receives F(b).
template <typename T>
ad::Var<T> equivariant_loss(ad::Tape<T> &tape, ad::ParamSet<T> &params, UnrolledNet const &net,
                            LinearOperator const &op, FilteredBackprojection const &fbp, std::span<const float> b,
                            std::span<const float> x0, int quarter_turns, double lambda, std::uint64_t seed,
                            ad::Var<T> *out = nullptr);

/// Self-supervised training from measurements only.
TrainResult ei_train(UnrolledNet &net, LinearOperator const &op, FilteredBackprojection const &fbp,
                     std::vector<Measurement> const &train, TrainConfig const &cfg, EpochCallback const &cb = {});

struct AdaptPoint
{
  int step = 0;
  double operator_calls = 0.0; ///< cumulative full-operator equivalents before this point
  double loss = 0.0;
  double psnr = 0.0; ///< NaN without a reference
};

struct AdaptResult
{
  UnrolledNet net;
  Vec output;
  std::vector<AdaptPoint> trace;
  void write_csv(std::filesystem::path const &path) const;
};

/// Fine-tunes a copy of `pretrained` on a single measurement with Adam on the
/// equivariant objective (weight cfg.lambda_adapt) for cfg.adapt_steps steps.
/// `reference` is only used to fill the PSNR column of the trace.
AdaptResult instance_adapt(UnrolledNet const &pretrained, LinearOperator const &op, FilteredBackprojection const &fbp,
                           std::span<const float> b, std::span<const float> x0, TrainConfig const &cfg,
                           std::span<const float> reference = {});

} // namespace lspd
