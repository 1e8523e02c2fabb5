#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lspd/common.hpp"
#include "lspd/linops.hpp"

namespace lspd {

/// prox of sigma * f*, f(z) = 1/2 ||z - b||^2: (y - sigma b) / (1 + sigma).
VecD prox_fstar_ls(std::span<const double> y, double sigma, std::span<const double> b);
/// prox of f / s for the same f: (s y + b) / (s + 1).
VecD prox_ls(std::span<const double> y, double s, std::span<const double> b);

/// Isotropic total variation with forward differences and Neumann boundary.
double total_variation(std::span<const double> x, int height, int width);

struct TvProxResult
{
  VecD z;
  double gap = 0.0; ///< primal-dual gap at exit
  int iterations = 0;
};

/// argmin_z 1/2 ||z - x||^2 + lambda TV(z) by fast gradient projection on the
/// dual. Stops after `iters` iterations or once the gap falls below `tol`.
TvProxResult prox_tv(std::span<const double> x, int height, int width, double lambda, int iters = 100,
                     double tol = 0.0);

struct PdhgConfig
{
  double sigma = 0.0; ///< dual step
  double tau = 0.0;   ///< primal step
  double beta = 1.0;  ///< over-relaxation in [0, 1]
  int iters = 100;
  double tv_weight = 0.0;
  int tv_inner = 100;
  /// Reject sigma * tau * ||A||^2 > 1 up front. Disabling leaves only the
  /// runtime divergence guard.
  bool enforce_step_condition = true;

  /// sigma = tau = 0.99 / ||A||.
  static PdhgConfig defaults(LinearOperator const &op);
  void validate(double op_norm) const;
};

enum class SubsetSchedule
{
  cyclic,
  uniform_random
};

std::string to_string(SubsetSchedule s);
SubsetSchedule subset_schedule_from_string(std::string const &s);

struct SolverTrace
{
  std::vector<int> iter;
  std::vector<double> objective; ///< 1/2 ||Ax - b||^2 + lambda TV(x)
  std::vector<double> psnr;      ///< empty unless ground truth was supplied

  void write_csv(std::filesystem::path const &path) const;
};

struct SolverResult
{
  VecD x;
  SolverTrace trace;
  std::vector<VecD> iterates; ///< x_0..x_K when requested
};

struct SolverOptions
{
  std::span<const double> truth; ///< optional ground truth for the PSNR column
  bool keep_iterates = false;
  CallCounter *counter = nullptr;
};

/// Chambolle-Pock iteration for min_x 1/2 ||Ax - b||^2 + lambda TV(x):
///   y+ = prox_{sigma f*}(y + sigma A xbar)
///   x+ = prox_{tau r}(x - tau A^T y+)
///   xbar = x+ + beta (x+ - x)
/// Throws "step sizes violate stability" if the objective blows up.
SolverResult pdhg_solve(LinearOperator const &op, std::span<const double> b, PdhgConfig const &cfg,
                        std::span<const double> x0, SolverOptions const &opt = {});

/// Stochastic variant on a partitioned operator: each iteration updates one
/// subset's dual block, refreshes h_i = (S_iA)^T y_i and steps the primal
/// along sum_j h_j. No dual extrapolation. With m = 1 it reproduces
/// pdhg_solve iterate for iterate.
SolverResult spdhg_solve(LinearOperator const &op, std::span<const double> b, PdhgConfig const &cfg,
                         std::span<const double> x0, SubsetSchedule schedule = SubsetSchedule::cyclic,
                         std::optional<std::uint64_t> seed = {}, SolverOptions const &opt = {});

} // namespace lspd
