#include "lspd/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lspd {

std::string to_string(ManifoldKind k)
{
  switch (k) {
  case ManifoldKind::sparse: return "sparse";
  case ManifoldKind::subspace: return "subspace";
  case ManifoldKind::ball: return "ball";
  }
  return "?";
}

std::vector<int> top_k_support(std::span<const double> x, int k)
{
  std::vector<int> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min<int>(k, int(x.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    double const fa = std::abs(x[a]);
    double const fb = std::abs(x[b]);
    return fa > fb || (fa == fb && a < b);
  });
  idx.resize(std::size_t(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

double top_k_norm(std::span<const double> g, int k)
{
  double s = 0.0;
  for (int i : top_k_support(g, k)) { s += g[i] * g[i]; }
  return std::sqrt(s);
}

ManifoldModel ManifoldModel::sparse(int dim, int s)
{
  if (dim < 1 || s < 1 || s > dim) { throw std::invalid_argument("sparse model needs 1 <= s <= d"); }
  ManifoldModel m;
  m.kind_ = ManifoldKind::sparse;
  m.dim_ = dim;
  m.s_ = s;
  return m;
}

ManifoldModel ManifoldModel::subspace(Eigen::MatrixXd const &basis)
{
  if (basis.cols() < 1 || basis.rows() < basis.cols()) { throw std::invalid_argument("subspace basis must be d x k, k <= d"); }
  ManifoldModel m;
  m.kind_ = ManifoldKind::subspace;
  m.dim_ = int(basis.rows());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  m.basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(basis.rows(), basis.cols());
  m.s_ = int(basis.cols());
  return m;
}

ManifoldModel ManifoldModel::ball(int dim, double radius)
{
  if (dim < 1 || !(radius > 0.0)) { throw std::invalid_argument("ball needs d >= 1 and radius > 0"); }
  ManifoldModel m;
  m.kind_ = ManifoldKind::ball;
  m.dim_ = dim;
  m.radius_ = radius;
  return m;
}

namespace {

void check_dim(std::span<const double> x, int d)
{
  if (x.size() != std::size_t(d)) { throw std::invalid_argument("manifold: dimension mismatch"); }
}

Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> x)
{
  return Eigen::Map<const Eigen::VectorXd>(x.data(), Eigen::Index(x.size()));
}

} // namespace

VecD ManifoldModel::project(std::span<const double> x) const
{
  check_dim(x, dim_);
  VecD out(x.size(), 0.0);
  switch (kind_) {
  case ManifoldKind::sparse:
    for (int i : top_k_support(x, s_)) { out[i] = x[i]; }
    break;
  case ManifoldKind::subspace: {
    Eigen::VectorXd const p = basis_ * (basis_.transpose() * as_eigen(x));
    std::copy(p.data(), p.data() + p.size(), out.begin());
    break;
  }
  case ManifoldKind::ball: {
    double const n = norm2(x);
    double const f = n > radius_ ? radius_ / n : 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) { out[i] = f * x[i]; }
    break;
  }
  }
  return out;
}

VecD ManifoldModel::project_approx(std::span<const double> x, std::mt19937_64 &rng) const
{
  VecD p = project(x);
  if (epsilon <= 0.0) { return p; }
  std::normal_distribution<double> nd;
  VecD e(p.size(), 0.0);
  switch (kind_) {
  case ManifoldKind::sparse:
    for (int i : top_k_support(x, s_)) { e[i] = nd(rng); }
    break;
  case ManifoldKind::subspace: {
    Eigen::VectorXd c(basis_.cols());
    for (Eigen::Index k = 0; k < c.size(); ++k) { c[k] = nd(rng); }
    Eigen::VectorXd const v = basis_ * c;
    std::copy(v.data(), v.data() + v.size(), e.begin());
    break;
  }
  case ManifoldKind::ball:
    for (auto &v : e) { v = nd(rng); }
    break;
  }
  double const n = norm2<double>(e);
  for (std::size_t i = 0; i < p.size(); ++i) { p[i] += epsilon * e[i] / n; }
  return p;
}

bool ManifoldModel::contains(std::span<const double> x, double tol) const
{
  check_dim(x, dim_);
  switch (kind_) {
  case ManifoldKind::sparse:
    return std::count_if(x.begin(), x.end(), [&](double v) { return std::abs(v) > tol; }) <= s_;
  case ManifoldKind::subspace: {
    Eigen::VectorXd const r = as_eigen(x) - basis_ * (basis_.transpose() * as_eigen(x));
    return r.norm() <= tol;
  }
  case ManifoldKind::ball:
    return norm2(x) <= radius_ + tol;
  }
  return false;
}

VecD ManifoldModel::sample_cone(std::span<const double> x_true, std::mt19937_64 &rng) const
{
  check_dim(x_true, dim_);
  std::normal_distribution<double> nd;
  VecD v(x_true.size(), 0.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    switch (kind_) {
    case ManifoldKind::sparse: {
      // z is a random s-sparse point; the support overlaps that of x_true in
      // a uniformly chosen number of positions so every overlap pattern occurs.
      std::vector<int> s0;
      for (int i = 0; i < dim_; ++i) {
        if (x_true[i] != 0.0) { s0.push_back(i); }
      }
      std::vector<int> rest;
      for (int i = 0; i < dim_; ++i) {
        if (x_true[i] == 0.0) { rest.push_back(i); }
      }
      int const max_overlap = std::min<int>(int(s0.size()), s_);
      int const min_overlap = std::max(0, s_ - int(rest.size()));
      int const overlap = std::uniform_int_distribution<int>(min_overlap, max_overlap)(rng);
      std::shuffle(s0.begin(), s0.end(), rng);
      std::shuffle(rest.begin(), rest.end(), rng);
      std::vector<int> K(s0.begin(), s0.begin() + overlap);
      K.insert(K.end(), rest.begin(), rest.begin() + (s_ - overlap));
      VecD z(x_true.size(), 0.0);
      double const scale = std::max(norm2(x_true), 1e-12);
      for (int i : K) { z[i] = (x_true[i] != 0.0 && std::uniform_int_distribution<int>(0, 1)(rng) ? x_true[i] : 0.0) + scale * nd(rng); }
      for (std::size_t i = 0; i < v.size(); ++i) { v[i] = z[i] - x_true[i]; }
      break;
    }
    case ManifoldKind::subspace: {
      Eigen::VectorXd c(basis_.cols());
      for (Eigen::Index k = 0; k < c.size(); ++k) { c[k] = nd(rng); }
      Eigen::VectorXd const w = basis_ * c;
      std::copy(w.data(), w.data() + w.size(), v.begin());
      break;
    }
    case ManifoldKind::ball: {
      for (auto &t : v) { t = nd(rng); }
      double const nx = norm2(x_true);
      if (nx >= radius_ * (1.0 - 1e-12)) {
        // boundary point: the cone is the half-space <v, x_true> <= 0
        double const ip = dot(std::span<const double>(v), x_true);
        if (ip > 0.0) {
          for (std::size_t i = 0; i < v.size(); ++i) { v[i] -= 2.0 * ip / (nx * nx) * x_true[i]; }
        }
      }
      break;
    }
    }
    double const n = norm2<double>(v);
    if (n > 0.0) {
      for (auto &t : v) { t /= n; }
      return v;
    }
  }
  throw std::runtime_error("degenerate descent cone");
}

std::vector<Eigen::MatrixXd> ManifoldModel::cone_subspaces(std::span<const double> x_true) const
{
  check_dim(x_true, dim_);
  if (kind_ == ManifoldKind::subspace) { return {basis_}; }
  if (kind_ == ManifoldKind::ball) { throw std::invalid_argument("the ball's cone is not a union of subspaces"); }
  std::vector<int> s0;
  for (int i = 0; i < dim_; ++i) {
    if (x_true[i] != 0.0) { s0.push_back(i); }
  }
  std::vector<Eigen::MatrixXd> out;
  std::vector<int> K(static_cast<std::size_t>(s_));
  std::iota(K.begin(), K.end(), 0);
  while (true) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(dim_);
    for (int i : s0) {
      if (!std::binary_search(K.begin(), K.end(), i)) { r[i] = x_true[i]; }
    }
    bool const extra = r.norm() > 0.0;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(dim_, s_ + (extra ? 1 : 0));
    for (int c = 0; c < s_; ++c) { B(K[c], c) = 1.0; }
    if (extra) { B.col(s_) = r / r.norm(); }
    out.push_back(std::move(B));
    // next combination in lexicographic order
    int j = s_ - 1;
    while (j >= 0 && K[j] == dim_ - s_ + j) { --j; }
    if (j < 0) { break; }
    ++K[j];
    for (int t = j + 1; t < s_; ++t) { K[t] = K[t - 1] + 1; }
  }
  return out;
}

double ManifoldModel::cone_sup(std::span<const double> g, std::span<const double> x_true, bool exact) const
{
  check_dim(g, dim_);
  switch (kind_) {
  case ManifoldKind::sparse: {
    if (!exact) { return top_k_norm(g, 2 * s_); }
    double best = 0.0;
    for (auto const &B : cone_subspaces(x_true)) { best = std::max(best, (B.transpose() * as_eigen(g)).norm()); }
    return best;
  }
  case ManifoldKind::subspace:
    return (basis_.transpose() * as_eigen(g)).norm();
  case ManifoldKind::ball: {
    double const nx = norm2(x_true);
    if (nx < radius_ * (1.0 - 1e-12)) { return norm2(g); }
    // half-space {<v, x> <= 0}
    double const ip = dot(g, x_true);
    if (ip <= 0.0) { return norm2(g); }
    double sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double const t = g[i] - ip / (nx * nx) * x_true[i];
      sq += t * t;
    }
    return std::sqrt(sq);
  }
  }
  return 0.0;
}

} // namespace lspd
