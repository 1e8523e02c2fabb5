#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lspd/common.hpp"

namespace lspd {

enum class ManifoldKind
{
  sparse,   ///< s-sparse vectors (non-convex)
  subspace, ///< span of an orthonormal basis (convex)
  ball      ///< centred l2 ball (convex)
};

std::string to_string(ManifoldKind k);

/// Signal model M with its exact projector, an optional projection error of
/// fixed norm epsilon, and the descent cone C = cone(M - x_true).
class ManifoldModel
{
public:
  static ManifoldModel sparse(int dim, int s);
  /// `basis` is d x k; it is orthonormalised on construction.
  static ManifoldModel subspace(Eigen::MatrixXd const &basis);
  static ManifoldModel ball(int dim, double radius);

  ManifoldKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int sparsity() const { return s_; }
  double radius() const { return radius_; }
  Eigen::MatrixXd const &basis() const { return basis_; }
  bool convex() const { return kind_ != ManifoldKind::sparse; }
  /// 2 for non-convex models, 1 otherwise.
  double kappa() const { return convex() ? 1.0 : 2.0; }

  double epsilon = 0.0; ///< norm of the injected projection error

  /// Exact projection. Sparse: keep the s largest magnitudes, ties to the
  /// lowest index.
  VecD project(std::span<const double> x) const;
  /// project(x) plus a random tangent perturbation of norm exactly epsilon
  /// (on the kept support / inside the subspace / isotropic for the ball).
  VecD project_approx(std::span<const double> x, std::mt19937_64 &rng) const;

  bool contains(std::span<const double> x, double tol = 0.0) const;

  /// Random unit vector of the descent cone at x_true.
  VecD sample_cone(std::span<const double> x_true, std::mt19937_64 &rng) const;

  /// The cone as a union of subspaces (orthonormal bases), when it is one:
  /// every support K of size s gives span{e_K, x_true restricted to S0 \ K}.
  /// Throws for the ball.
  std::vector<Eigen::MatrixXd> cone_subspaces(std::span<const double> x_true) const;

  /// sup over v in C, ||v|| <= 1 of <v, g>. The relaxed form bounds the
  /// sparse cone by all 2s-sparse directions (top-2s magnitudes); the exact
  /// form enumerates cone_subspaces.
  double cone_sup(std::span<const double> g, std::span<const double> x_true, bool exact = false) const;

private:
  ManifoldKind kind_ = ManifoldKind::sparse;
  int dim_ = 0;
  int s_ = 0;
  double radius_ = 0.0;
  Eigen::MatrixXd basis_;
};

/// Norm of the k largest-magnitude entries.
double top_k_norm(std::span<const double> g, int k);

/// Indices of the k largest magnitudes, ties to the lowest index.
std::vector<int> top_k_support(std::span<const double> x, int k);

} // namespace lspd
