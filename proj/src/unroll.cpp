#include "lspd/unroll.hpp"

#include <cmath>
#include <stdexcept>

namespace lspd {

std::string to_string(Variant v)
{
  switch (v) {
  case Variant::lpd: return "lpd";
  case Variant::lspd: return "lspd";
  case Variant::lspd_vr: return "lspd_vr";
  case Variant::simplified: return "simplified";
  }
  return "?";
}

Variant variant_from_string(std::string const &s)
{
  if (s == "lpd") { return Variant::lpd; }
  if (s == "lspd") { return Variant::lspd; }
  if (s == "lspd_vr") { return Variant::lspd_vr; }
  if (s == "simplified") { return Variant::simplified; }
  throw std::invalid_argument("unknown variant: " + s);
}

void UnrollConfig::validate() const
{
  if (layers < 1) { throw std::invalid_argument("layers must be >= 1"); }
  if (subsets < 1) { throw std::invalid_argument("subsets must be >= 1"); }
  if (hidden < 1) { throw std::invalid_argument("hidden channels must be >= 1"); }
  if (kernel < 1 || kernel % 2 == 0) { throw std::invalid_argument("kernel size must be odd"); }
  if (!(op_scale > 0.0) || !std::isfinite(op_scale)) { throw std::invalid_argument("op_scale must be positive"); }
}

namespace {

struct SubnetSpec
{
  std::string prefix;
  int in_channels;
};

std::vector<SubnetSpec> subnet_specs(UnrollConfig const &cfg)
{
  std::vector<SubnetSpec> out;
  if (cfg.variant == Variant::simplified) {
    out.push_back({"primal.", 1});
    return out;
  }
  for (int k = 0; k < cfg.layers; ++k) {
    out.push_back({"layer" + std::to_string(k) + ".dual.", 3});
    out.push_back({"layer" + std::to_string(k) + ".primal.", 2});
  }
  return out;
}

std::vector<std::string> step_names(UnrollConfig const &cfg)
{
  if (cfg.variant == Variant::simplified) { return {"tau"}; }
  std::vector<std::string> out;
  for (int k = 0; k < cfg.layers; ++k) {
    out.push_back("layer" + std::to_string(k) + ".sigma");
    out.push_back("layer" + std::to_string(k) + ".tau");
  }
  return out;
}

void add_subnet(ad::ParamSet<float> &P, SubnetSpec const &s, UnrollConfig const &cfg)
{
  int const k = cfg.kernel;
  int const h = cfg.hidden;
  P.add(s.prefix + "conv1.weight", ad::Tensor<float>(ad::Shape{h, s.in_channels * k, k}));
  P.add(s.prefix + "conv1.bias", ad::Tensor<float>(ad::Shape{h, 1, 1}));
  P.add(s.prefix + "prelu1.alpha", ad::Tensor<float>(ad::Shape{h, 1, 1}, float(cfg.prelu_init)));
  P.add(s.prefix + "conv2.weight", ad::Tensor<float>(ad::Shape{h, h * k, k}));
  P.add(s.prefix + "conv2.bias", ad::Tensor<float>(ad::Shape{h, 1, 1}));
  P.add(s.prefix + "prelu2.alpha", ad::Tensor<float>(ad::Shape{h, 1, 1}, float(cfg.prelu_init)));
  P.add(s.prefix + "conv3.weight", ad::Tensor<float>(ad::Shape{1, h * k, k}));
  P.add(s.prefix + "conv3.bias", ad::Tensor<float>(ad::Shape{1, 1, 1}));
}

} // namespace

ad::ParamSet<float> zero_params(UnrollConfig const &cfg)
{
  cfg.validate();
  ad::ParamSet<float> P;
  for (auto const &s : subnet_specs(cfg)) { add_subnet(P, s, cfg); }
  for (auto const &n : step_names(cfg)) { P.add(n, ad::Tensor<float>(ad::Shape{1, 1, 1}, 1.0f)); }
  return P;
}

UnrolledNet::UnrolledNet(UnrollConfig cfg, std::uint64_t init_seed)
  : cfg_(std::move(cfg))
{
  params_ = zero_params(cfg_);
  init_params(init_seed);
}

UnrolledNet::UnrolledNet(UnrollConfig cfg, ad::ParamSet<float> params)
  : cfg_(std::move(cfg))
  , params_(std::move(params))
{
  cfg_.validate();
  check_params();
}

void UnrolledNet::init_params(std::uint64_t seed)
{
  // He-uniform for PReLU fan-in; the last conv of every subnet starts at zero
  // so the untrained network passes its state through unchanged.
  std::mt19937_64 rng(seed);
  double const a = cfg_.prelu_init;
  for (auto const &s : subnet_specs(cfg_)) {
    for (int layer = 1; layer <= 2; ++layer) {
      auto &w = params_.get(s.prefix + "conv" + std::to_string(layer) + ".weight").value;
      int const fan_in = w.shape().height * w.shape().width;
      double const bound = std::sqrt(6.0 / ((1.0 + a * a) * fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto &v : w.values()) { v = float(u(rng)); }
    }
  }
}

void UnrolledNet::check_params() const
{
  auto const ref = zero_params(cfg_);
  if (ref.size() != params_.size()) {
    throw std::invalid_argument("parameter count " + std::to_string(params_.size()) + " does not match variant " +
                                to_string(cfg_.variant) + " (expected " + std::to_string(ref.size()) + ")");
  }
  for (std::size_t k = 0; k < ref.size(); ++k) {
    auto const &r = ref[k];
    if (!params_.contains(r.name)) { throw std::invalid_argument("missing parameter " + r.name); }
    if (!(params_.get(r.name).value.shape() == r.value.shape())) {
      throw std::invalid_argument("parameter " + r.name + " has the wrong shape");
    }
  }
}

UnrolledNet UnrolledNet::from_checkpoint(Checkpoint const &ck)
{
  try {
    auto const &m = ck.meta;
    UnrollConfig cfg;
    cfg.variant = variant_from_string(m.at("variant").get<std::string>());
    cfg.schedule = subset_schedule_from_string(m.at("schedule").get<std::string>());
    cfg.layers = m.at("layers").get<int>();
    cfg.subsets = m.at("subsets").get<int>();
    cfg.hidden = m.at("hidden").get<int>();
    cfg.kernel = m.at("kernel").get<int>();
    cfg.reset_dual = m.at("reset_dual").get<bool>();
    cfg.op_scale = m.at("op_scale").get<double>();
    cfg.prelu_init = m.at("prelu_init").get<double>();
    return UnrolledNet(cfg, ck.params);
  } catch (nlohmann::json::exception const &e) {
    throw std::runtime_error(std::string("checkpoint metadata incomplete: ") + e.what());
  }
}

Checkpoint UnrolledNet::to_checkpoint() const
{
  Checkpoint ck;
  ck.meta = {{"variant", to_string(cfg_.variant)}, {"schedule", to_string(cfg_.schedule)},
             {"layers", cfg_.layers},               {"subsets", cfg_.subsets},
             {"hidden", cfg_.hidden},               {"kernel", cfg_.kernel},
             {"reset_dual", cfg_.reset_dual},       {"op_scale", cfg_.op_scale},
             {"prelu_init", cfg_.prelu_init}};
  ck.params = params_;
  return ck;
}

std::vector<int> UnrolledNet::subset_sequence(std::optional<std::uint64_t> seed) const
{
  std::vector<int> seq(static_cast<std::size_t>(cfg_.layers), -1);
  if (cfg_.variant == Variant::lpd) { return seq; }
  int const m = cfg_.subsets;
  if (cfg_.schedule == SubsetSchedule::uniform_random) {
    if (!seed) { throw std::invalid_argument("uniform_random schedule requires a seed"); }
    std::mt19937_64 rng(*seed);
    std::uniform_int_distribution<int> pick(0, m - 1);
    for (auto &i : seq) { i = pick(rng); }
  } else {
    for (int k = 0; k < cfg_.layers; ++k) { seq[k] = k % m; }
  }
  return seq;
}

namespace {

template <typename T>
struct Builder
{
  ad::Tape<T> &tape;
  ad::ParamSet<T> &params;
  bool track;

  ad::Var<T> param(std::string const &name)
  {
    auto &p = params.get(name);
    return track ? tape.parameter(p) : tape.constant(p.value);
  }

  ad::Var<T> subnet(std::string const &prefix, ad::Var<T> in, int k)
  {
    auto h = ad::conv2d(in, param(prefix + "conv1.weight"), param(prefix + "conv1.bias"), k);
    h = ad::prelu(h, param(prefix + "prelu1.alpha"));
    h = ad::conv2d(h, param(prefix + "conv2.weight"), param(prefix + "conv2.bias"), k);
    h = ad::prelu(h, param(prefix + "prelu2.alpha"));
    return ad::conv2d(h, param(prefix + "conv3.weight"), param(prefix + "conv3.bias"), k);
  }
};

} // namespace

template <typename T>
ad::Var<T> UnrolledNet::forward(ad::Tape<T> &tape, ad::ParamSet<T> &params, LinearOperator const &op, ad::Var<T> b,
                                ad::Var<T> x0, ForwardOptions const &opt,
                                std::vector<std::vector<T>> *snapshots) const
{
  int const m = cfg_.effective_subsets();
  if (m > 1 && (!op.has_partition() || op.subset_count() != m)) {
    throw std::invalid_argument("operator must carry a partition into " + std::to_string(m) + " subsets");
  }
  ad::Shape const image{1, op.domain_height(), op.domain_width()};
  ad::Shape const meas{1, op.range_height(), op.range_width()};
  if (!(x0.shape() == image)) { throw std::invalid_argument("x0 shape " + ad::to_string(x0.shape()) + " != " + ad::to_string(image)); }
  if (!(b.shape() == meas)) { throw std::invalid_argument("b shape " + ad::to_string(b.shape()) + " != " + ad::to_string(meas)); }

  auto const seq = subset_sequence(opt.seed);
  auto subset_of = [&](int i) -> std::optional<int> {
    if (i < 0 || !op.has_partition()) { return std::nullopt; }
    return i;
  };
  int const q = op.subset_rows(subset_of(seq.front()));
  ad::Shape const dual_shape{1, q / op.range_width(), op.range_width()};

  Builder<T> B{tape, params, opt.track_params};
  double const s = cfg_.op_scale;
  int const k = cfg_.kernel;

  ad::Var<T> x = x0;
  ad::Var<T> y = tape.constant(ad::Tensor<T>(dual_shape));
  std::vector<ad::Var<T>> h;
  if (cfg_.variant == Variant::lspd_vr) {
    for (int j = 0; j < m; ++j) { h.push_back(tape.constant(ad::Tensor<T>(image))); }
  }
  if (snapshots) { snapshots->push_back(x.value().data()); }

  for (int layer = 0; layer < cfg_.layers; ++layer) {
    std::string const L = "layer" + std::to_string(layer) + ".";
    auto const so = subset_of(seq[layer]);
    ad::Var<T> bi = so ? ad::restrict_rows(b, op, *so) : b;
    if (cfg_.variant == Variant::simplified) {
      auto Ax = ad::linear_op(x, op, so, ad::Direction::forward);
      auto r = ad::sub(Ax, bi);
      auto g = ad::linear_op(r, op, so, ad::Direction::adjoint);
      auto z = ad::sub(x, ad::scale(ad::scale(g, s * s * m), B.param("tau")));
      x = ad::add(z, B.subnet("primal.", z, k));
    } else {
      if (cfg_.reset_dual) { y = tape.constant(ad::Tensor<T>(dual_shape)); }
      auto Ax = ad::linear_op(x, op, so, ad::Direction::forward);
      auto din = ad::concat_channels<T>({ad::scale(bi, s), ad::scale(ad::scale(Ax, s), B.param(L + "sigma")), y});
      y = ad::add(y, B.subnet(L + "dual.", din, k));
      auto g = ad::linear_op(y, op, so, ad::Direction::adjoint);
      if (cfg_.variant == Variant::lspd_vr) {
        h[std::size_t(std::max(seq[layer], 0))] = g;
        g = ad::sum(h);
      }
      auto pin = ad::concat_channels<T>({ad::scale(ad::scale(g, s), B.param(L + "tau")), x});
      x = ad::add(x, B.subnet(L + "primal.", pin, k));
    }
    if (snapshots) { snapshots->push_back(x.value().data()); }
  }
  if (opt.memory_norms) {
    opt.memory_norms->clear();
    for (auto const &hj : h) { opt.memory_norms->push_back(norm2<T>(hj.value().values())); }
  }
  return x;
}

Vec UnrolledNet::reconstruct(LinearOperator const &op, std::span<const float> b, std::span<const float> x0,
                             ForwardOptions const &opt, CallCounter *counter, std::vector<Vec> *snapshots) const
{
  if (b.size() != std::size_t(op.rows()) || x0.size() != std::size_t(op.cols())) {
    throw std::invalid_argument("reconstruct: dimension mismatch");
  }
  ad::Tape<float> tape;
  tape.counter = counter;
  auto bv = tape.constant(ad::Tensor<float>(ad::Shape{1, op.range_height(), op.range_width()}, Vec(b.begin(), b.end())));
  auto xv = tape.constant(ad::Tensor<float>(ad::Shape{1, op.domain_height(), op.domain_width()}, Vec(x0.begin(), x0.end())));
  ForwardOptions o = opt;
  o.track_params = false;
  auto &P = const_cast<ad::ParamSet<float> &>(params_);
  auto out = forward<float>(tape, P, op, bv, xv, o, snapshots);
  return out.value().data();
}

template ad::Var<float> UnrolledNet::forward(ad::Tape<float> &, ad::ParamSet<float> &, LinearOperator const &,
                                             ad::Var<float>, ad::Var<float>, ForwardOptions const &,
                                             std::vector<std::vector<float>> *) const;
template ad::Var<double> UnrolledNet::forward(ad::Tape<double> &, ad::ParamSet<double> &, LinearOperator const &,
                                              ad::Var<double>, ad::Var<double>, ForwardOptions const &,
                                              std::vector<std::vector<double>> *) const;

SimplifiedTrace simplified_lspd_forward(ManifoldModel const &proj, LinearOperator const &op,
                                        std::span<const double> b, std::span<const double> x0, double tau, int K,
                                        std::uint64_t seed, SubsetSchedule schedule, CallCounter *counter)
{
  if (!(tau > 0.0)) { throw std::invalid_argument("simplified recursion needs tau > 0"); }
  if (b.size() != std::size_t(op.rows()) || x0.size() != std::size_t(op.cols())) {
    throw std::invalid_argument("simplified recursion: dimension mismatch");
  }
  int const m = op.subset_count();
  std::mt19937_64 pick_rng(seed);
  std::mt19937_64 proj_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> pick(0, m - 1);
  std::vector<VecD> bi;
  for (int i = 0; i < m; ++i) {
    bi.push_back(op.has_partition() ? op.restrict_rows<double>(b, i) : VecD(b.begin(), b.end()));
  }
  SimplifiedTrace tr;
  VecD x(x0.begin(), x0.end());
  tr.iterates.push_back(x);
  for (int k = 0; k < K; ++k) {
    int const i = schedule == SubsetSchedule::cyclic ? k % m : pick(pick_rng);
    std::optional<int> const so = op.has_partition() ? std::optional<int>(i) : std::nullopt;
    auto y = op.apply<double>(std::span<const double>(x), so, counter);
    for (std::size_t r = 0; r < y.size(); ++r) { y[r] -= bi[i][r]; }
    auto const g = op.adjoint<double>(std::span<const double>(y), so, counter);
    for (std::size_t j = 0; j < x.size(); ++j) { x[j] -= tau * g[j]; }
    x = proj.project_approx(x, proj_rng);
    tr.subsets.push_back(i);
    tr.iterates.push_back(x);
  }
  tr.x = x;
  return tr;
}

} // namespace lspd
