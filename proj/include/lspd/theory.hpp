#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lspd/linops.hpp"
#include "lspd/manifold.hpp"
#include "lspd/solvers.hpp"

namespace lspd {

// ---------------------------------------------------------------------------
// Gaussian width

struct WidthEstimate
{
  double mean = 0.0;
  double stderr_ = 0.0;
  int trials = 0;
};

/// sup over the set of <v, u> for a given u.
using SupFunction = std::function<double(std::span<const double>)>;

/// Monte-Carlo estimate of E sup_{v in set} <v, u>, u ~ N(0, I_dim).
WidthEstimate gaussian_width_mc(SupFunction const &sup, int dim, int trials, std::uint64_t seed);

SupFunction sup_finite_set(std::vector<VecD> points);
/// Unit sphere of span(U), U orthonormal: ||U^T u||.
SupFunction sup_subspace(Eigen::MatrixXd U);
/// s-sparse unit vectors: norm of the top-s magnitudes.
SupFunction sup_sparse_sphere(int s);
/// Descent cone of `model` at x_true intersected with the unit sphere.
SupFunction sup_cone(ManifoldModel model, VecD x_true, bool exact = false);

/// E||u_n|| = sqrt(2) Gamma((n+1)/2) / Gamma(n/2), via log-Gamma.
double expected_norm_p(int n);

// ---------------------------------------------------------------------------
// Restricted constants

struct RestrictedConstants
{
  double mu_c = 0.0; ///< min over C of (1/n) ||Av||^2 / ||v||^2
  double L_c = 0.0;  ///< max over C and i of (1/q) ||S_iAv||^2 / ||v||^2
  double L_s = 0.0;  ///< max over R^d and i of the same
  std::string mu_method;
  std::string Lc_method;
  std::string Ls_method;
  int samples = 0;

  nlohmann::json to_json() const;
};

/// L_s from the largest eigenvalue of (S_iA)^T S_iA (dense, d <= 1024) or the
/// power method otherwise.
double subset_smoothness(LinearOperator const &op, std::string *method = nullptr);

/// Sampled estimate: min / max over `samples` random cone directions.
RestrictedConstants restricted_constants(LinearOperator const &op, ManifoldModel const &model,
                                         std::span<const double> x_true, int samples, std::uint64_t seed);

/// Exact values when the cone is a union of subspaces: extreme eigenvalues of
/// U^T A^T A U over every piece.
RestrictedConstants restricted_constants_exact(LinearOperator const &op, ManifoldModel const &model,
                                               std::span<const double> x_true);

using NoiseSampler = std::function<VecD(std::mt19937_64 &)>;

/// delta = 2 tau E_w sup_{v in C, ||v|| <= 1, i} v^T (S_iA)^T S_i w.
double delta_estimate(LinearOperator const &op, double tau, ManifoldModel const &model,
                      std::span<const double> x_true, NoiseSampler const &noise, int trials, std::uint64_t seed,
                      bool exact = false);

// ---------------------------------------------------------------------------
// Bound curves

struct BoundCurve
{
  std::vector<double> values; ///< k = 0..K
  double rate = 0.0;
  bool vacuous = false;      ///< rate >= 1 (upper) or all values <= 0 (lower)
  bool limit_branch = false; ///< rate == 1 handled by the limit form
  bool clamped = false;      ///< negative values were clamped to 0
};

/// alpha = 2 (1 - mu_c / L_s)
double thm31_alpha(double mu_c, double L_s);

/// alpha^k e0 + (1 - alpha^k) / (1 - alpha) (eps + delta); alpha = 1 uses
/// e0 + k (eps + delta).
BoundCurve thm31_curve(double alpha, double eps, double delta, double e0, int K);

/// (1 - gamma)^k (1 - L_c / L_s)^k e0 - (L_s / L_c) eps, clamped at 0.
/// Throws "lower bound requires convex M" when `convex` is false.
BoundCurve thm32_curve(double L_c, double L_s, double eps, double gamma, double e0, int K, bool convex);

struct Thm33Result
{
  double p_n = 0.0;
  double p_q = 0.0;
  double alpha_U = 0.0;
  double alpha_L = 0.0;
  double alpha_U_approx = 0.0;   ///< kappa (1 - n / (sqrt n + sqrt(nd/q))^2)
  double alpha_U_approx_w = 0.0; ///< kappa (1 - (sqrt n - W)^2 / (sqrt n + sqrt(nd/q))^2)
  double prob_upper = 0.0;       ///< 1 - m K exp(-theta^2 / 2)
  double prob_lower = 0.0;       ///< 1 - m exp(-theta^2 / 2)
  bool vacuous_U = false;

  nlohmann::json to_json() const;
};

Thm33Result thm33_alphas(int n, int d, int q, int m, int K, double sigma_a, double sigma_b, double W, double theta,
                         bool convex);

struct EscapeMeshResult
{
  double theta = 0.0;
  double pass_lower = 0.0; ///< ||Av|| >= sigma_b (p_n - W - theta) ||v|| on the whole cone
  double pass_upper = 0.0; ///< ||S_iAv|| <= sigma_a (p_q + W + theta) ||v|| for every i
  double pass_joint = 0.0;
  double bound_lower = 0.0; ///< 1 - exp(-theta^2 / 2)
  double bound_upper = 0.0; ///< 1 - m exp(-theta^2 / 2)
  int trials = 0;
};

/// Draws fresh standard Gaussian G (n x d) per trial, forms A = G B and checks
/// both inequalities exactly over the cone (a union of subspaces). Every theta
/// is evaluated on the same draws, so pass rates are monotone in theta.
std::vector<EscapeMeshResult> escape_mesh_check(Eigen::MatrixXd const &B, ManifoldModel const &model,
                                                std::span<const double> x_true, int n, int m, double W,
                                                std::vector<double> const &thetas, int trials, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Simplified-recursion experiment

struct TheoryScenario
{
  std::string name = "gaussian_sparse";
  int n = 512;
  int d = 64;
  int m = 4;
  std::string manifold = "sparse"; ///< sparse | subspace
  int s = 2;                       ///< sparsity or subspace dimension
  double epsilon = 0.0;
  double noise_sigma = 0.0;
  int K = 60;
  int seeds = 20;
  std::uint64_t base_seed = 1;
  std::uint64_t operator_seed = 7;
  /// Entry standard deviation of G; 1 puts (1/n) ||Av||^2 on the scale of ||v||^2.
  double entry_std = 1.0;
  std::string x0 = "zero"; ///< zero | near (x_true + 0.1 ||x_true|| v, v in the cone)
  std::string constants = "exact"; ///< exact | sampled
  int constant_samples = 2000;
  int delta_trials = 200;
  double gamma = 0.0;
  double theta = 0.0;
  int width_trials = 2000;
  SubsetSchedule schedule = SubsetSchedule::uniform_random;

  void validate() const;
  nlohmann::json to_json() const;
  static TheoryScenario from_json(nlohmann::json const &j);
};

struct TheoryReport
{
  TheoryScenario scenario;
  RestrictedConstants constants;
  double alpha = 0.0;
  double tau = 0.0;
  double delta = 0.0;
  double e0 = 0.0;
  double width = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> observed_mean;
  std::vector<std::vector<double>> observed;
  BoundCurve upper;
  bool thm31_holds = false;
  bool has_lower = false;
  BoundCurve lower;
  bool thm32_holds = false;
  std::vector<double> fitted_rate; ///< per seed, (e_10 / e_0)^(1/10)
  Thm33Result thm33;
  bool alpha_U_bounds_fit = false;
  double final_relative_error = 0.0; ///< mean e_K / e_0

  nlohmann::json to_json() const;
  void write_csv(std::filesystem::path const &path) const;
};

TheoryReport simplified_lspd_experiment(TheoryScenario const &sc);

} // namespace lspd
