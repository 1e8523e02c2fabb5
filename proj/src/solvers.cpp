#include "lspd/solvers.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "lspd/metrics.hpp"

namespace lspd {

VecD prox_fstar_ls(std::span<const double> y, double sigma, std::span<const double> b)
{
  if (!(sigma > 0.0)) { throw std::invalid_argument("prox_fstar_ls: sigma must be positive"); }
  if (y.size() != b.size()) { throw std::invalid_argument("prox_fstar_ls: size mismatch"); }
  VecD out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) { out[i] = (y[i] - sigma * b[i]) / (1.0 + sigma); }
  return out;
}

VecD prox_ls(std::span<const double> y, double s, std::span<const double> b)
{
  if (!(s > 0.0)) { throw std::invalid_argument("prox_ls: step must be positive"); }
  VecD out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) { out[i] = (s * y[i] + b[i]) / (s + 1.0); }
  return out;
}

namespace {

// Forward differences with zero flux at the far edge.
void gradient(std::span<const double> z, int h, int w, VecD &gx, VecD &gy)
{
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      std::size_t const p = std::size_t(i) * w + j;
      gx[p] = j + 1 < w ? z[p + 1] - z[p] : 0.0;
      gy[p] = i + 1 < h ? z[p + w] - z[p] : 0.0;
    }
  }
}

// div = -grad^T
void divergence(VecD const &px, VecD const &py, int h, int w, VecD &out)
{
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      std::size_t const p = std::size_t(i) * w + j;
      double d = 0.0;
      if (j + 1 < w) { d += px[p]; }
      if (j > 0) { d -= px[p - 1]; }
      if (i + 1 < h) { d += py[p]; }
      if (i > 0) { d -= py[p - w]; }
      out[p] = d;
    }
  }
}

} // namespace

double total_variation(std::span<const double> x, int h, int w)
{
  if (x.size() != std::size_t(h) * w) { throw std::invalid_argument("total_variation: size mismatch"); }
  VecD gx(x.size()), gy(x.size());
  gradient(x, h, w, gx, gy);
  double tv = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) { tv += std::sqrt(gx[p] * gx[p] + gy[p] * gy[p]); }
  return tv;
}

TvProxResult prox_tv(std::span<const double> x, int h, int w, double lambda, int iters, double tol)
{
  if (lambda < 0.0) { throw std::invalid_argument("prox_tv: lambda must be nonnegative"); }
  if (x.size() != std::size_t(h) * w) { throw std::invalid_argument("prox_tv: size mismatch"); }
  TvProxResult res;
  if (lambda == 0.0) {
    res.z.assign(x.begin(), x.end());
    return res;
  }
  std::size_t const n = x.size();
  VecD px(n, 0.0), py(n, 0.0), rx(n, 0.0), ry(n, 0.0), qx(n), qy(n), gx(n), gy(n), div(n), z(n);
  double t = 1.0;
  double const step = 1.0 / (8.0 * lambda);
  double const xx = dot<double>(x, x);

  auto primal_from = [&](VecD const &ax, VecD const &ay, VecD &out) {
    divergence(ax, ay, h, w, div);
    for (std::size_t p = 0; p < n; ++p) { out[p] = x[p] + lambda * div[p]; }
  };
  auto gap_of = [&](VecD const &zz) {
    double fit = 0.0;
    for (std::size_t p = 0; p < n; ++p) { fit += (zz[p] - x[p]) * (zz[p] - x[p]); }
    double const primal = 0.5 * fit + lambda * total_variation(zz, h, w);
    double const dual = 0.5 * xx - 0.5 * dot<double>(zz, zz);
    return primal - dual;
  };

  for (int k = 0; k < iters; ++k) {
    primal_from(rx, ry, z);
    gradient(z, h, w, gx, gy);
    for (std::size_t p = 0; p < n; ++p) {
      double const ax = rx[p] + step * gx[p];
      double const ay = ry[p] + step * gy[p];
      double const nrm = std::max(1.0, std::sqrt(ax * ax + ay * ay));
      qx[p] = ax / nrm;
      qy[p] = ay / nrm;
    }
    double const tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double const c = (t - 1.0) / tn;
    for (std::size_t p = 0; p < n; ++p) {
      rx[p] = qx[p] + c * (qx[p] - px[p]);
      ry[p] = qy[p] + c * (qy[p] - py[p]);
    }
    px.swap(qx);
    py.swap(qy);
    t = tn;
    res.iterations = k + 1;
    if (tol > 0.0 && (k % 10 == 9)) {
      primal_from(px, py, z);
      if (gap_of(z) <= tol) { break; }
    }
  }
  primal_from(px, py, z);
  res.gap = gap_of(z);
  res.z = std::move(z);
  return res;
}

PdhgConfig PdhgConfig::defaults(LinearOperator const &op)
{
  PdhgConfig c;
  double const L = operator_norm(op);
  c.sigma = c.tau = L > 0.0 ? 0.99 / L : 1.0;
  return c;
}

void PdhgConfig::validate(double op_norm) const
{
  if (!(sigma > 0.0) || !(tau > 0.0)) { throw std::invalid_argument("pdhg: step sizes must be positive"); }
  if (beta < 0.0 || beta > 1.0) { throw std::invalid_argument("pdhg: beta must lie in [0, 1]"); }
  if (iters < 0) { throw std::invalid_argument("pdhg: iteration count must be nonnegative"); }
  if (tv_weight < 0.0) { throw std::invalid_argument("pdhg: tv_weight must be nonnegative"); }
  if (tv_inner < 1) { throw std::invalid_argument("pdhg: tv_inner must be positive"); }
  if (enforce_step_condition && sigma * tau * op_norm * op_norm > 1.0 + 1e-9) {
    throw std::invalid_argument("step sizes violate stability");
  }
}

std::string to_string(SubsetSchedule s) { return s == SubsetSchedule::cyclic ? "cyclic" : "uniform_random"; }

SubsetSchedule subset_schedule_from_string(std::string const &s)
{
  if (s == "cyclic") { return SubsetSchedule::cyclic; }
  if (s == "uniform_random") { return SubsetSchedule::uniform_random; }
  throw std::invalid_argument("unknown subset schedule: " + s);
}

void SolverTrace::write_csv(std::filesystem::path const &path) const
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "iter,objective,psnr\n";
  os.precision(17);
  for (std::size_t k = 0; k < iter.size(); ++k) {
    os << iter[k] << ',' << objective[k] << ',';
    if (k < psnr.size()) { os << psnr[k]; }
    os << '\n';
  }
}

namespace {

class Recorder
{
public:
  Recorder(LinearOperator const &op, std::span<const double> b, PdhgConfig const &cfg, SolverOptions const &opt,
           SolverResult &res)
    : op_(op)
    , b_(b)
    , cfg_(cfg)
    , opt_(opt)
    , res_(res)
  {
  }

  void record(int k, VecD const &x)
  {
    auto const r = op_.apply<double>(std::span<const double>(x));
    double fit = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) { fit += (r[i] - b_[i]) * (r[i] - b_[i]); }
    double obj = 0.5 * fit;
    if (cfg_.tv_weight > 0.0) {
      obj += cfg_.tv_weight * total_variation(x, op_.domain_height(), op_.domain_width());
    }
    if (!std::isfinite(obj) || (k > 0 && obj > 1e3 * std::max(res_.trace.objective.front(), 1.0))) {
      throw std::runtime_error("step sizes violate stability");
    }
    res_.trace.iter.push_back(k);
    res_.trace.objective.push_back(obj);
    if (!opt_.truth.empty()) { res_.trace.psnr.push_back(psnr(std::span<const double>(x), opt_.truth)); }
    if (opt_.keep_iterates) { res_.iterates.push_back(x); }
  }

private:
  LinearOperator const &op_;
  std::span<const double> b_;
  PdhgConfig const &cfg_;
  SolverOptions const &opt_;
  SolverResult &res_;
};

VecD primal_prox(LinearOperator const &op, PdhgConfig const &cfg, VecD v)
{
  if (cfg.tv_weight <= 0.0) { return v; }
  return prox_tv(v, op.domain_height(), op.domain_width(), cfg.tau * cfg.tv_weight, cfg.tv_inner).z;
}

void check_inputs(LinearOperator const &op, std::span<const double> b, std::span<const double> x0)
{
  if (b.size() != std::size_t(op.rows())) { throw std::invalid_argument("pdhg: measurement size mismatch"); }
  if (x0.size() != std::size_t(op.cols())) { throw std::invalid_argument("pdhg: x0 size mismatch"); }
}

} // namespace

SolverResult pdhg_solve(LinearOperator const &op, std::span<const double> b, PdhgConfig const &cfg,
                        std::span<const double> x0, SolverOptions const &opt)
{
  check_inputs(op, b, x0);
  cfg.validate(cfg.enforce_step_condition ? operator_norm(op) : 0.0);
  SolverResult res;
  Recorder rec(op, b, cfg, opt, res);
  VecD x(x0.begin(), x0.end());
  VecD xbar = x;
  VecD y(b.size(), 0.0);
  rec.record(0, x);
  for (int k = 0; k < cfg.iters; ++k) {
    auto const Ax = op.apply<double>(std::span<const double>(xbar), {}, opt.counter);
    for (std::size_t i = 0; i < y.size(); ++i) { y[i] += cfg.sigma * Ax[i]; }
    y = prox_fstar_ls(y, cfg.sigma, b);
    auto const Aty = op.adjoint<double>(std::span<const double>(y), {}, opt.counter);
    VecD v(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) { v[j] = x[j] - cfg.tau * Aty[j]; }
    VecD xn = primal_prox(op, cfg, std::move(v));
    for (std::size_t j = 0; j < x.size(); ++j) { xbar[j] = xn[j] + cfg.beta * (xn[j] - x[j]); }
    x = std::move(xn);
    rec.record(k + 1, x);
  }
  res.x = std::move(x);
  return res;
}

SolverResult spdhg_solve(LinearOperator const &op, std::span<const double> b, PdhgConfig const &cfg,
                         std::span<const double> x0, SubsetSchedule schedule, std::optional<std::uint64_t> seed,
                         SolverOptions const &opt)
{
  check_inputs(op, b, x0);
  if (!op.has_partition()) { throw std::invalid_argument("spdhg: operator carries no subset partition"); }
  if (schedule == SubsetSchedule::uniform_random && !seed) {
    throw std::invalid_argument("uniform_random schedule requires a seed");
  }
  cfg.validate(cfg.enforce_step_condition ? operator_norm(op) : 0.0);
  int const m = op.subset_count();
  std::mt19937_64 rng(seed.value_or(0));
  std::uniform_int_distribution<int> pick(0, m - 1);

  SolverResult res;
  Recorder rec(op, b, cfg, opt, res);
  VecD x(x0.begin(), x0.end());
  VecD xbar = x;
  std::vector<VecD> y(static_cast<std::size_t>(m));
  std::vector<VecD> bi(static_cast<std::size_t>(m));
  std::vector<VecD> h(std::size_t(m), VecD(x.size(), 0.0));
  for (int i = 0; i < m; ++i) {
    bi[i] = op.restrict_rows<double>(b, i);
    y[i].assign(bi[i].size(), 0.0);
  }
  VecD hsum(x.size(), 0.0);
  rec.record(0, x);
  for (int k = 0; k < cfg.iters; ++k) {
    int const i = schedule == SubsetSchedule::cyclic ? k % m : pick(rng);
    auto const Ax = op.apply<double>(std::span<const double>(xbar), i, opt.counter);
    for (std::size_t r = 0; r < y[i].size(); ++r) { y[i][r] += cfg.sigma * Ax[r]; }
    y[i] = prox_fstar_ls(y[i], cfg.sigma, bi[i]);
    h[i] = op.adjoint<double>(std::span<const double>(y[i]), i, opt.counter);
    if (m == 1) {
      hsum = h[0];
    } else {
      std::fill(hsum.begin(), hsum.end(), 0.0);
      for (int j = 0; j < m; ++j) {
        for (std::size_t p = 0; p < hsum.size(); ++p) { hsum[p] += h[j][p]; }
      }
    }
    VecD v(x.size());
    for (std::size_t p = 0; p < x.size(); ++p) { v[p] = x[p] - cfg.tau * hsum[p]; }
    VecD xn = primal_prox(op, cfg, std::move(v));
    for (std::size_t p = 0; p < x.size(); ++p) { xbar[p] = xn[p] + cfg.beta * (xn[p] - x[p]); }
    x = std::move(xn);
    rec.record(k + 1, x);
  }
  res.x = std::move(x);
  return res;
}

} // namespace lspd
