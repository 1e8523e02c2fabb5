#include "lspd/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lspd/unroll.hpp"

namespace lspd {

namespace {

Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> v)
{
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

VecD gaussian_vector(int n, std::mt19937_64 &rng, double sd = 1.0)
{
  std::normal_distribution<double> nd(0.0, sd);
  VecD u(static_cast<std::size_t>(n));
  for (auto &x : u) { x = nd(rng); }
  return u;
}

// sup over the unit ball of a union of subspaces with orthonormal bases.
double union_sup(std::vector<Eigen::MatrixXd> const &pieces, Eigen::VectorXd const &g)
{
  double best = 0.0;
  for (auto const &U : pieces) { best = std::max(best, (U.transpose() * g).norm()); }
  return best;
}

int rows_per_subset(LinearOperator const &op, int i)
{
  return op.has_partition() ? op.subset_rows(i) : op.rows();
}

std::vector<Eigen::MatrixXd> subset_grams(LinearOperator const &op)
{
  std::vector<Eigen::MatrixXd> out;
  for (int i = 0; i < op.subset_count(); ++i) {
    Eigen::MatrixXd const Ai = dense_matrix(op, op.has_partition() ? std::optional<int>(i) : std::nullopt);
    out.push_back(Ai.transpose() * Ai / double(Ai.rows()));
  }
  return out;
}

void require_on_manifold(ManifoldModel const &model, std::span<const double> x_true)
{
  if (!model.contains(x_true, 1e-9)) { throw std::invalid_argument("x_true must lie on the manifold"); }
}

} // namespace

// ---------------------------------------------------------------------------

WidthEstimate gaussian_width_mc(SupFunction const &sup, int dim, int trials, std::uint64_t seed)
{
  if (!sup) { throw std::invalid_argument("gaussian width: empty set"); }
  if (trials < 100) { throw std::invalid_argument("gaussian width needs at least 100 trials"); }
  if (dim < 1) { throw std::invalid_argument("gaussian width: dim must be positive"); }
  std::mt19937_64 rng(seed);
  double s = 0.0, s2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto const u = gaussian_vector(dim, rng);
    double const v = sup(u);
    s += v;
    s2 += v * v;
  }
  WidthEstimate w;
  w.trials = trials;
  w.mean = s / trials;
  double const var = std::max(0.0, s2 / trials - w.mean * w.mean);
  w.stderr_ = std::sqrt(var / trials);
  return w;
}

SupFunction sup_finite_set(std::vector<VecD> points)
{
  if (points.empty()) { throw std::invalid_argument("gaussian width: empty set"); }
  return [pts = std::move(points)](std::span<const double> u) {
    double best = -std::numeric_limits<double>::infinity();
    for (auto const &p : pts) {
      if (p.size() != u.size()) { throw std::invalid_argument("gaussian width: dimension mismatch"); }
      best = std::max(best, dot<double>(p, u));
    }
    return best;
  };
}

SupFunction sup_subspace(Eigen::MatrixXd U)
{
  if (U.cols() == 0) { throw std::invalid_argument("gaussian width: empty set"); }
  return [U = std::move(U)](std::span<const double> u) { return (U.transpose() * as_eigen(u)).norm(); };
}

SupFunction sup_sparse_sphere(int s)
{
  if (s < 1) { throw std::invalid_argument("gaussian width: empty set"); }
  return [s](std::span<const double> u) { return top_k_norm(u, s); };
}

SupFunction sup_cone(ManifoldModel model, VecD x_true, bool exact)
{
  if (exact && model.kind() != ManifoldKind::ball) {
    auto pieces = model.cone_subspaces(x_true);
    return [pieces = std::move(pieces)](std::span<const double> u) { return union_sup(pieces, as_eigen(u)); };
  }
  return [model = std::move(model), x = std::move(x_true), exact](std::span<const double> u) {
    return model.cone_sup(u, x, exact);
  };
}

double expected_norm_p(int n)
{
  if (n < 1) { throw std::invalid_argument("expected_norm_p needs n >= 1"); }
  return std::sqrt(2.0) * std::exp(std::lgamma(0.5 * (n + 1)) - std::lgamma(0.5 * n));
}

// ---------------------------------------------------------------------------

nlohmann::json RestrictedConstants::to_json() const
{
  return {{"mu_c", mu_c},           {"L_c", L_c},           {"L_s", L_s},
          {"mu_method", mu_method}, {"Lc_method", Lc_method}, {"Ls_method", Ls_method},
          {"samples", samples}};
}

double subset_smoothness(LinearOperator const &op, std::string *method)
{
  double Ls = 0.0;
  if (op.cols() <= 1024) {
    for (auto const &G : subset_grams(op)) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
      Ls = std::max(Ls, es.eigenvalues().maxCoeff());
    }
    if (method) { *method = "eigen"; }
  } else {
    for (int i = 0; i < op.subset_count(); ++i) {
      std::optional<int> const so = op.has_partition() ? std::optional<int>(i) : std::nullopt;
      double const s = operator_norm(op, 300, so);
      Ls = std::max(Ls, s * s / rows_per_subset(op, i));
    }
    if (method) { *method = "power"; }
  }
  return Ls;
}

RestrictedConstants restricted_constants(LinearOperator const &op, ManifoldModel const &model,
                                         std::span<const double> x_true, int samples, std::uint64_t seed)
{
  if (samples < 1000) { throw std::invalid_argument("restricted_constants needs at least 1000 samples"); }
  require_on_manifold(model, x_true);
  std::mt19937_64 rng(seed);
  RestrictedConstants rc;
  rc.mu_c = std::numeric_limits<double>::infinity();
  int used = 0;
  int const m = op.subset_count();
  for (int t = 0; t < samples; ++t) {
    auto const v = model.sample_cone(x_true, rng);
    double const nv = norm2<double>(v);
    if (!(nv > 0.0)) { continue; }
    auto const Av = op.apply<double>(std::span<const double>(v));
    rc.mu_c = std::min(rc.mu_c, dot<double>(Av, Av) / (op.rows() * nv * nv));
    for (int i = 0; i < m; ++i) {
      auto const yi = op.has_partition() ? op.restrict_rows<double>(Av, i) : Av;
      rc.L_c = std::max(rc.L_c, dot<double>(yi, yi) / (double(yi.size()) * nv * nv));
    }
    ++used;
  }
  if (used == 0) { throw std::runtime_error("restricted_constants: degenerate cone"); }
  rc.samples = used;
  rc.mu_method = "sampled-min";
  rc.Lc_method = "sampled-max";
  rc.L_s = subset_smoothness(op, &rc.Ls_method);
  return rc;
}

RestrictedConstants restricted_constants_exact(LinearOperator const &op, ManifoldModel const &model,
                                               std::span<const double> x_true)
{
  require_on_manifold(model, x_true);
  auto const pieces = model.cone_subspaces(x_true);
  Eigen::MatrixXd const A = dense_matrix(op);
  Eigen::MatrixXd const G = A.transpose() * A / double(A.rows());
  auto const Gi = subset_grams(op);
  RestrictedConstants rc;
  rc.mu_c = std::numeric_limits<double>::infinity();
  for (auto const &U : pieces) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(U.transpose() * G * U, Eigen::EigenvaluesOnly);
    rc.mu_c = std::min(rc.mu_c, es.eigenvalues().minCoeff());
    for (auto const &H : Gi) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(U.transpose() * H * U, Eigen::EigenvaluesOnly);
      rc.L_c = std::max(rc.L_c, ei.eigenvalues().maxCoeff());
    }
  }
  rc.mu_c = std::max(rc.mu_c, 0.0);
  rc.samples = int(pieces.size());
  rc.mu_method = "subspace-eigen";
  rc.Lc_method = "subspace-eigen";
  rc.L_s = subset_smoothness(op, &rc.Ls_method);
  return rc;
}

double delta_estimate(LinearOperator const &op, double tau, ManifoldModel const &model,
                      std::span<const double> x_true, NoiseSampler const &noise, int trials, std::uint64_t seed,
                      bool exact)
{
  if (trials < 1) { throw std::invalid_argument("delta_estimate needs trials >= 1"); }
  std::vector<Eigen::MatrixXd> pieces;
  bool const use_pieces = exact && model.kind() != ManifoldKind::ball;
  if (use_pieces) { pieces = model.cone_subspaces(x_true); }
  std::mt19937_64 rng(seed);
  double acc = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto const w = noise(rng);
    if (w.size() != std::size_t(op.rows())) { throw std::invalid_argument("delta_estimate: noise has wrong size"); }
    double best = 0.0;
    for (int i = 0; i < op.subset_count(); ++i) {
      std::optional<int> const so = op.has_partition() ? std::optional<int>(i) : std::nullopt;
      auto const wi = so ? op.restrict_rows<double>(w, i) : w;
      auto const g = op.adjoint<double>(std::span<const double>(wi), so);
      double const s = use_pieces ? union_sup(pieces, as_eigen(g)) : model.cone_sup(g, x_true, exact);
      best = std::max(best, s);
    }
    acc += best;
  }
  return 2.0 * tau * acc / trials;
}

// ---------------------------------------------------------------------------

double thm31_alpha(double mu_c, double L_s)
{
  if (!(L_s > 0.0)) { throw std::invalid_argument("L_s must be positive"); }
  return 2.0 * (1.0 - mu_c / L_s);
}

BoundCurve thm31_curve(double alpha, double eps, double delta, double e0, int K)
{
  if (K < 0) { throw std::invalid_argument("K must be non-negative"); }
  BoundCurve c;
  c.rate = alpha;
  c.vacuous = alpha >= 1.0;
  c.limit_branch = alpha == 1.0;
  double const r = eps + delta;
  for (int k = 0; k <= K; ++k) {
    double const ak = std::pow(alpha, k);
    double const tail = c.limit_branch ? k * r : (1.0 - ak) / (1.0 - alpha) * r;
    c.values.push_back(ak * e0 + tail);
  }
  return c;
}

BoundCurve thm32_curve(double L_c, double L_s, double eps, double gamma, double e0, int K, bool convex)
{
  if (!convex) { throw std::invalid_argument("lower bound requires convex M"); }
  if (!(L_c > 0.0) || !(L_s > 0.0)) { throw std::invalid_argument("thm32_curve: L_c and L_s must be positive"); }
  BoundCurve c;
  c.rate = (1.0 - gamma) * (1.0 - L_c / L_s);
  bool any_positive = false;
  for (int k = 0; k <= K; ++k) {
    double v = std::pow(c.rate, k) * e0 - (L_s / L_c) * eps;
    if (v < 0.0) {
      v = 0.0;
      c.clamped = true;
    }
    if (k >= 1 && v > 0.0) { any_positive = true; }
    c.values.push_back(v);
  }
  c.vacuous = !any_positive;
  return c;
}

nlohmann::json Thm33Result::to_json() const
{
  return {{"p_n", p_n},
          {"p_q", p_q},
          {"alpha_U", alpha_U},
          {"alpha_L", alpha_L},
          {"alpha_U_approx", alpha_U_approx},
          {"alpha_U_approx_w", alpha_U_approx_w},
          {"prob_upper", prob_upper},
          {"prob_lower", prob_lower},
          {"vacuous_U", vacuous_U}};
}

Thm33Result thm33_alphas(int n, int d, int q, int m, int K, double sigma_a, double sigma_b, double W, double theta,
                         bool convex)
{
  if (n < 1 || d < 1 || q < 1 || m < 1 || !(sigma_a > 0.0) || !(sigma_b > 0.0) || W < 0.0 || theta < 0.0) {
    throw std::invalid_argument("thm33_alphas: arguments must be positive");
  }
  double const kappa = convex ? 1.0 : 2.0;
  Thm33Result r;
  r.p_n = expected_norm_p(n);
  r.p_q = expected_norm_p(q);
  double const sd = std::sqrt(double(d));
  double const lo = r.p_n - W - theta;
  double const hi = r.p_q + sd + theta;
  r.alpha_U = kappa * (1.0 - sigma_b * q * lo * lo / (sigma_a * n * hi * hi));
  double const a = r.p_q + W + theta;
  double const b = r.p_q - sd - theta;
  r.alpha_L = 1.0 - sigma_b * a * a / (sigma_a * b * b);
  double const rn = std::sqrt(double(n));
  double const den = rn + std::sqrt(double(n) * d / q);
  r.alpha_U_approx = kappa * (1.0 - double(n) / (den * den));
  r.alpha_U_approx_w = kappa * (1.0 - (rn - W) * (rn - W) / (den * den));
  double const e = std::exp(-0.5 * theta * theta);
  r.prob_upper = 1.0 - double(m) * std::max(K, 1) * e;
  r.prob_lower = 1.0 - double(m) * e;
  r.vacuous_U = r.alpha_U >= 1.0;
  return r;
}

std::vector<EscapeMeshResult> escape_mesh_check(Eigen::MatrixXd const &B, ManifoldModel const &model,
                                                std::span<const double> x_true, int n, int m, double W,
                                                std::vector<double> const &thetas, int trials, std::uint64_t seed)
{
  int const d = model.dim();
  if (B.rows() != d || B.cols() != d) { throw std::invalid_argument("escape_mesh_check: B must be d x d"); }
  if (m < 1 || n % m != 0) { throw std::invalid_argument("escape_mesh_check: m must divide n"); }
  if (trials < 1) { throw std::invalid_argument("escape_mesh_check: trials must be positive"); }
  int const q = n / m;
  auto const pieces = model.cone_subspaces(x_true);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(B);
  double const sigma_a = svd.singularValues().maxCoeff();
  double const sigma_b = svd.singularValues().minCoeff();
  double const pn = expected_norm_p(n);
  double const pq = expected_norm_p(q);

  std::vector<EscapeMeshResult> out(thetas.size());
  std::vector<int> pass_lo(thetas.size(), 0), pass_hi(thetas.size(), 0), pass_both(thetas.size(), 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (int t = 0; t < trials; ++t) {
    Eigen::MatrixXd G(n, d);
    for (Eigen::Index c = 0; c < G.cols(); ++c) {
      for (Eigen::Index r = 0; r < G.rows(); ++r) { G(r, c) = nd(rng); }
    }
    Eigen::MatrixXd const A = G * B;
    // Extreme gains over the cone: smallest ||Av|| and largest ||S_iAv|| per unit v.
    double smin = std::numeric_limits<double>::infinity();
    double smax = 0.0;
    for (auto const &U : pieces) {
      Eigen::MatrixXd const AU = A * U;
      Eigen::JacobiSVD<Eigen::MatrixXd> s(AU);
      smin = std::min(smin, s.singularValues().minCoeff());
      for (int i = 0; i < m; ++i) {
        Eigen::JacobiSVD<Eigen::MatrixXd> si(AU.middleRows(Eigen::Index(i) * q, q));
        smax = std::max(smax, si.singularValues().maxCoeff());
      }
    }
    for (std::size_t k = 0; k < thetas.size(); ++k) {
      double const th = thetas[k];
      bool const lo = smin >= sigma_b * (pn - W - th);
      bool const hi = smax <= sigma_a * (pq + W + th);
      pass_lo[k] += lo;
      pass_hi[k] += hi;
      pass_both[k] += lo && hi;
    }
  }
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    auto &r = out[k];
    r.theta = thetas[k];
    r.trials = trials;
    r.pass_lower = double(pass_lo[k]) / trials;
    r.pass_upper = double(pass_hi[k]) / trials;
    r.pass_joint = double(pass_both[k]) / trials;
    double const e = std::exp(-0.5 * thetas[k] * thetas[k]);
    r.bound_lower = 1.0 - e;
    r.bound_upper = 1.0 - m * e;
  }
  return out;
}

// ---------------------------------------------------------------------------

void TheoryScenario::validate() const
{
  auto fail = [](std::string const &msg) { throw std::invalid_argument("theory scenario: " + msg); };
  if (n < 1 || d < 1) { fail("n and d must be positive"); }
  if (m < 1 || n % m != 0) { fail("m must divide n"); }
  if (manifold != "sparse" && manifold != "subspace") { fail("manifold must be sparse or subspace"); }
  if (s < 1 || s > d) { fail("s must be in [1, d]"); }
  if (epsilon < 0.0 || noise_sigma < 0.0) { fail("epsilon and noise_sigma must be non-negative"); }
  if (K < 1) { fail("K must be positive"); }
  if (seeds < 1) { fail("seeds must be positive"); }
  if (!(entry_std > 0.0)) { fail("entry_std must be positive"); }
  if (x0 != "zero" && x0 != "near") { fail("x0 must be zero or near"); }
  if (constants != "exact" && constants != "sampled") { fail("constants must be exact or sampled"); }
  if (constants == "sampled" && constant_samples < 1000) { fail("constant_samples must be at least 1000"); }
  if (delta_trials < 1) { fail("delta_trials must be positive"); }
  if (gamma < 0.0 || gamma >= 1.0) { fail("gamma must be in [0, 1)"); }
  if (theta < 0.0) { fail("theta must be non-negative"); }
  if (width_trials < 100) { fail("width_trials must be at least 100"); }
}

nlohmann::json TheoryScenario::to_json() const
{
  return {{"name", name},
          {"n", n},
          {"d", d},
          {"m", m},
          {"manifold", manifold},
          {"s", s},
          {"epsilon", epsilon},
          {"noise_sigma", noise_sigma},
          {"K", K},
          {"seeds", seeds},
          {"base_seed", base_seed},
          {"operator_seed", operator_seed},
          {"entry_std", entry_std},
          {"x0", x0},
          {"constants", constants},
          {"constant_samples", constant_samples},
          {"delta_trials", delta_trials},
          {"gamma", gamma},
          {"theta", theta},
          {"width_trials", width_trials},
          {"schedule", to_string(schedule)}};
}

TheoryScenario TheoryScenario::from_json(nlohmann::json const &j)
{
  TheoryScenario sc;
  auto const keys = sc.to_json();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!keys.contains(it.key())) { throw std::invalid_argument("theory scenario: unknown key '" + it.key() + "'"); }
  }
  auto get = [&](char const *k, auto &dst) {
    if (j.contains(k)) { dst = j.at(k).get<std::decay_t<decltype(dst)>>(); }
  };
  get("name", sc.name);
  get("n", sc.n);
  get("d", sc.d);
  get("m", sc.m);
  get("manifold", sc.manifold);
  get("s", sc.s);
  get("epsilon", sc.epsilon);
  get("noise_sigma", sc.noise_sigma);
  get("K", sc.K);
  get("seeds", sc.seeds);
  get("base_seed", sc.base_seed);
  get("operator_seed", sc.operator_seed);
  get("entry_std", sc.entry_std);
  get("x0", sc.x0);
  get("constants", sc.constants);
  get("constant_samples", sc.constant_samples);
  get("delta_trials", sc.delta_trials);
  get("gamma", sc.gamma);
  get("theta", sc.theta);
  get("width_trials", sc.width_trials);
  if (j.contains("schedule")) { sc.schedule = subset_schedule_from_string(j.at("schedule").get<std::string>()); }
  sc.validate();
  return sc;
}

namespace {

nlohmann::json curve_json(BoundCurve const &c)
{
  return {{"values", c.values},
          {"rate", c.rate},
          {"vacuous", c.vacuous},
          {"limit_branch", c.limit_branch},
          {"clamped", c.clamped}};
}

} // namespace

nlohmann::json TheoryReport::to_json() const
{
  nlohmann::json j;
  j["scenario"] = scenario.to_json();
  j["constants"] = constants.to_json();
  j["alpha"] = alpha;
  j["tau"] = tau;
  j["delta"] = delta;
  j["e0"] = e0;
  j["width"] = width;
  j["seeds"] = seeds;
  j["observed_mean"] = observed_mean;
  j["observed"] = observed;
  j["thm31_upper"] = curve_json(upper);
  j["thm31_holds"] = thm31_holds;
  if (!upper.vacuous) {
    j["plateau_bound"] = (scenario.epsilon + delta) / (1.0 - alpha);
  } else {
    j["plateau_bound"] = nullptr;
  }
  if (has_lower) {
    j["thm32_lower"] = curve_json(lower);
    j["thm32_holds"] = thm32_holds;
  }
  j["fitted_rate"] = fitted_rate;
  j["thm33"] = thm33.to_json();
  j["alpha_U_bounds_fit"] = alpha_U_bounds_fit;
  j["final_relative_error"] = final_relative_error;
  return j;
}

void TheoryReport::write_csv(std::filesystem::path const &path) const
{
  std::ofstream f(path);
  if (!f) { throw std::runtime_error("cannot write " + path.string()); }
  f.precision(17);
  f << "k,observed_mean,observed_min,observed_max,thm31_upper";
  if (has_lower) { f << ",thm32_lower"; }
  f << '\n';
  for (std::size_t k = 0; k < observed_mean.size(); ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (auto const &c : observed) {
      lo = std::min(lo, c[k]);
      hi = std::max(hi, c[k]);
    }
    f << k << ',' << observed_mean[k] << ',' << lo << ',' << hi << ',' << upper.values[k];
    if (has_lower) { f << ',' << lower.values[k]; }
    f << '\n';
  }
  if (!f) { throw std::runtime_error("failed writing " + path.string()); }
}

TheoryReport simplified_lspd_experiment(TheoryScenario const &sc)
{
  sc.validate();
  TheoryReport rep;
  rep.scenario = sc;

  auto op = gaussian_operator(sc.n, sc.d, nullptr, sc.operator_seed, sc.entry_std);
  op = op.with_partition(partition(op, sc.m));
  int const q = sc.n / sc.m;

  std::mt19937_64 gen(sc.operator_seed + 1);
  std::normal_distribution<double> nd;
  VecD x_true(static_cast<std::size_t>(sc.d), 0.0);
  ManifoldModel model = ManifoldModel::sparse(sc.d, sc.s);
  if (sc.manifold == "sparse") {
    std::vector<int> idx(static_cast<std::size_t>(sc.d));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), gen);
    std::uniform_real_distribution<double> mag(0.5, 1.5);
    for (int k = 0; k < sc.s; ++k) { x_true[idx[k]] = (gen() & 1 ? 1.0 : -1.0) * mag(gen); }
  } else {
    Eigen::MatrixXd basis(sc.d, sc.s);
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
      for (Eigen::Index r = 0; r < basis.rows(); ++r) { basis(r, c) = nd(gen); }
    }
    model = ManifoldModel::subspace(basis);
    Eigen::VectorXd coef(sc.s);
    for (auto &c : coef) { c = nd(gen); }
    Eigen::VectorXd const xt = model.basis() * coef;
    x_true.assign(xt.data(), xt.data() + xt.size());
  }
  model.epsilon = sc.epsilon;

  VecD x0(x_true.size(), 0.0);
  if (sc.x0 == "near") {
    std::mt19937_64 r0(sc.operator_seed + 2);
    auto const v = model.sample_cone(x_true, r0);
    double const sc0 = 0.1 * norm2<double>(x_true);
    for (std::size_t i = 0; i < x0.size(); ++i) { x0[i] = x_true[i] + sc0 * v[i]; }
  }
  {
    VecD diff(x0);
    for (std::size_t i = 0; i < diff.size(); ++i) { diff[i] -= x_true[i]; }
    rep.e0 = norm2<double>(diff);
  }

  rep.constants = sc.constants == "exact" ? restricted_constants_exact(op, model, x_true)
                                          : restricted_constants(op, model, x_true, sc.constant_samples,
                                                                 sc.operator_seed + 3);
  rep.alpha = thm31_alpha(rep.constants.mu_c, rep.constants.L_s);
  rep.tau = 1.0 / (q * rep.constants.L_s);

  bool const exact_cone = sc.constants == "exact";
  if (sc.noise_sigma > 0.0) {
    int const n = sc.n;
    double const sigma = sc.noise_sigma;
    rep.delta = delta_estimate(
      op, rep.tau, model, x_true, [n, sigma](std::mt19937_64 &r) { return gaussian_vector(n, r, sigma); },
      sc.delta_trials, sc.operator_seed + 4, exact_cone);
  }

  auto const Ax = op.apply<double>(std::span<const double>(x_true));
  rep.seeds.resize(static_cast<std::size_t>(sc.seeds));
  rep.observed.assign(static_cast<std::size_t>(sc.seeds), {});
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < sc.seeds; ++t) {
    std::uint64_t const seed = sc.base_seed + std::uint64_t(t);
    rep.seeds[t] = seed;
    VecD b(Ax);
    if (sc.noise_sigma > 0.0) {
      std::mt19937_64 wr(seed ^ 0x5deece66dULL);
      std::normal_distribution<double> wn(0.0, sc.noise_sigma);
      for (auto &v : b) { v += wn(wr); }
    }
    auto const tr = simplified_lspd_forward(model, op, b, x0, rep.tau, sc.K, seed, sc.schedule);
    std::vector<double> err;
    for (auto const &x : tr.iterates) {
      double s2 = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) { s2 += (x[i] - x_true[i]) * (x[i] - x_true[i]); }
      err.push_back(std::sqrt(s2));
    }
    rep.observed[t] = std::move(err);
  }
  rep.observed_mean.assign(static_cast<std::size_t>(sc.K + 1), 0.0);
  for (auto const &c : rep.observed) {
    for (int k = 0; k <= sc.K; ++k) { rep.observed_mean[k] += c[k] / sc.seeds; }
  }

  rep.upper = thm31_curve(rep.alpha, sc.epsilon, rep.delta, rep.e0, sc.K);
  rep.thm31_holds = true;
  for (int k = 0; k <= sc.K; ++k) {
    if (rep.observed_mean[k] > rep.upper.values[k] * (1.0 + 1e-12) + 1e-12) { rep.thm31_holds = false; }
  }
  if (model.convex()) {
    rep.has_lower = true;
    rep.lower = thm32_curve(rep.constants.L_c, rep.constants.L_s, sc.epsilon, sc.gamma, rep.e0, sc.K, true);
    rep.thm32_holds = true;
    for (int k = 0; k <= sc.K; ++k) {
      if (rep.observed_mean[k] < rep.lower.values[k] - 1e-8) { rep.thm32_holds = false; }
    }
  }

  int const kfit = std::min(10, sc.K);
  double max_fit = 0.0;
  for (auto const &c : rep.observed) {
    double const r = c[0] > 0.0 ? std::pow(c[kfit] / c[0], 1.0 / kfit) : 0.0;
    rep.fitted_rate.push_back(r);
    max_fit = std::max(max_fit, r);
  }

  auto const wsup = sup_cone(model, x_true, exact_cone);
  rep.width = gaussian_width_mc(wsup, sc.d, sc.width_trials, sc.operator_seed + 5).mean;
  rep.thm33 = thm33_alphas(sc.n, sc.d, q, sc.m, sc.K, 1.0, 1.0, rep.width, sc.theta, model.convex());
  rep.alpha_U_bounds_fit = max_fit <= rep.thm33.alpha_U;
  rep.final_relative_error = rep.e0 > 0.0 ? rep.observed_mean.back() / rep.e0 : 0.0;
  return rep;
}

} // namespace lspd
