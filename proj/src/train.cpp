#include "lspd/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "lspd/metrics.hpp"

namespace lspd {

template <typename T>
void adam_step(ad::ParamSet<T> &params, AdamState &state, double lr_scale)
{
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (T g : params[k].grad.values()) {
      if (!std::isfinite(double(g))) { throw std::runtime_error("gradient blow-up: non-finite gradient in " + params[k].name); }
    }
  }
  auto const &c = state.cfg;
  state.t += 1;
  double const bc1 = 1.0 - std::pow(c.beta1, double(state.t));
  double const bc2 = 1.0 - std::pow(c.beta2, double(state.t));
  double const lr = c.lr * lr_scale;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto &p = params[k];
    auto &m = state.m[p.name];
    auto &v = state.v[p.name];
    if (m.size() != p.value.size()) {
      m.assign(p.value.size(), 0.0);
      v.assign(p.value.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double const g = double(p.grad[i]);
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      double const mh = m[i] / bc1;
      double const vh = v[i] / bc2;
      p.value[i] = T(double(p.value[i]) - lr * mh / (std::sqrt(vh) + c.eps));
    }
  }
}

template void adam_step(ad::ParamSet<float> &, AdamState &, double);
template void adam_step(ad::ParamSet<double> &, AdamState &, double);

void TrainConfig::validate() const
{
  if (epochs < 0) { throw std::invalid_argument("epochs must be >= 0"); }
  if (!(lr > 0.0)) { throw std::invalid_argument("lr must be positive"); }
  if (lambda_ei < 0.0) { throw std::invalid_argument("lambda_ei must be nonnegative"); }
  if (lambda_adapt < 0.0) { throw std::invalid_argument("lambda_adapt must be nonnegative"); }
  if (!(adapt_lr > 0.0)) { throw std::invalid_argument("adapt_lr must be positive"); }
  if (adapt_steps < 0) { throw std::invalid_argument("adapt_steps must be >= 0"); }
  if (checkpoint_every < 0) { throw std::invalid_argument("checkpoint_every must be >= 0"); }
}

void TrainResult::write_csv(std::filesystem::path const &path) const
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "# psnr peak = max(ref) - min(ref)\n";
  os << "epoch,train_loss,val_psnr,val_ssim,operator_calls\n";
  os.precision(10);
  for (auto const &e : epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_psnr << ',' << e.val_ssim << ',' << e.operator_calls << '\n';
  }
}

namespace {

ad::Shape image_shape(LinearOperator const &op) { return {1, op.domain_height(), op.domain_width()}; }
ad::Shape meas_shape(LinearOperator const &op) { return {1, op.range_height(), op.range_width()}; }

double lr_scale_at(TrainConfig const &cfg, int epoch)
{
  if (!cfg.cosine_decay || cfg.epochs <= 1) { return 1.0; }
  return 0.5 * (1.0 + std::cos(kPi * double(epoch) / double(cfg.epochs)));
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64 &rng)
{
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

void validate_into(EpochRecord &rec, UnrolledNet const &net, LinearOperator const &op, std::vector<Sample> const &val,
                   std::uint64_t seed)
{
  rec.val_psnr = std::numeric_limits<double>::quiet_NaN();
  rec.val_ssim = std::numeric_limits<double>::quiet_NaN();
  if (val.empty() || !val.front().truth) { return; }
  double ps = 0.0, ss = 0.0;
  for (std::size_t k = 0; k < val.size(); ++k) {
    auto const x = net.reconstruct(op, val[k].b, val[k].x0, ForwardOptions{seed + k, false});
    ps += psnr(x, *val[k].truth);
    ss += ssim(x, *val[k].truth, op.domain_height(), op.domain_width());
  }
  rec.val_psnr = ps / double(val.size());
  rec.val_ssim = ss / double(val.size());
}

void maybe_checkpoint(TrainConfig const &cfg, UnrolledNet const &net, int epoch)
{
  if (cfg.checkpoint_every <= 0 || cfg.out_dir.empty() || (epoch + 1) % cfg.checkpoint_every != 0) { return; }
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(cfg.out_dir / ("epoch" + std::to_string(epoch + 1) + ".ckpt"), net.to_checkpoint());
}

} // namespace

TrainResult supervised_train(UnrolledNet &net, LinearOperator const &op, std::vector<Sample> const &train,
                             std::vector<Sample> const &val, TrainConfig const &cfg, EpochCallback const &cb)
{
  cfg.validate();
  if (train.empty()) { throw std::invalid_argument("empty training set"); }
  for (auto const &s : train) {
    if (!s.truth) { throw std::invalid_argument("supervised training needs ground truth for every sample"); }
  }
  AdamState adam;
  adam.cfg.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed);
  CallCounter counter;
  counter.rows_per_call = op.rows();
  TrainResult res;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t idx : shuffled(train.size(), rng)) {
      auto const &s = train[idx];
      ad::Tape<float> tape;
      tape.counter = &counter;
      auto b = tape.constant(ad::Tensor<float>(meas_shape(op), s.b));
      auto x0 = tape.constant(ad::Tensor<float>(image_shape(op), s.x0));
      auto x = net.forward<float>(tape, net.params(), op, b, x0, ForwardOptions{cfg.seed + step, true});
      auto target = tape.constant(ad::Tensor<float>(image_shape(op), *s.truth));
      auto loss = ad::mean_squares(ad::sub(x, target));
      loss_sum += tape.scalar(loss);
      net.params().zero_grad();
      tape.backward(loss);
      adam_step(net.params(), adam, lr_scale_at(cfg, epoch));
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train.size());
    rec.operator_calls = counter.total_equivalents();
    validate_into(rec, net, op, val, cfg.seed);
    res.epochs.push_back(rec);
    maybe_checkpoint(cfg, net, epoch);
    if (cb) { cb(rec, net); }
  }
  return res;
}

Vec apply_group_action(std::span<const float> x, int size, int quarter_turns)
{
  if (x.size() != std::size_t(size) * std::size_t(size)) { throw std::invalid_argument("group action requires a square image"); }
  ad::Tensor<float> t(ad::Shape{1, size, size}, Vec(x.begin(), x.end()));
  return ad::rotate90(t, quarter_turns).data();
}

template <typename T>
ad::Var<T> equivariant_loss(ad::Tape<T> &tape, ad::ParamSet<T> &params, UnrolledNet const &net,
                            LinearOperator const &op, FilteredBackprojection const &fbp, std::span<const float> b,
                            std::span<const float> x0, int quarter_turns, double lambda, std::uint64_t seed,
                            ad::Var<T> *out)
{
  double const d = double(op.cols());
  auto bv = tape.constant(ad::Tensor<T>(meas_shape(op), std::vector<T>(b.begin(), b.end())));
  auto xv = tape.constant(ad::Tensor<T>(image_shape(op), std::vector<T>(x0.begin(), x0.end())));
  auto x1 = net.forward<T>(tape, params, op, bv, xv, ForwardOptions{seed, true});
  if (out) { *out = x1; }
  auto Ax1 = ad::linear_op(x1, op, std::nullopt, ad::Direction::forward);
  auto mc = ad::scale(ad::sum_squares(ad::sub(bv, Ax1)), 1.0 / d);
  if (lambda == 0.0) { return mc; }
  auto xt = ad::rotate90(x1, quarter_turns);
  auto b2 = ad::linear_op(xt, op, std::nullopt, ad::Direction::forward);
  auto x02 = ad::fbp(b2, fbp);
  auto x2 = net.forward<T>(tape, params, op, b2, x02, ForwardOptions{seed + 1, true});
  auto eq = ad::scale(ad::sum_squares(ad::sub(xt, x2)), lambda / d);
  return ad::add(mc, eq);
}

template ad::Var<float> equivariant_loss(ad::Tape<float> &, ad::ParamSet<float> &, UnrolledNet const &,
                                         LinearOperator const &, FilteredBackprojection const &, std::span<const float>,
                                         std::span<const float>, int, double, std::uint64_t, ad::Var<float> *);
template ad::Var<double> equivariant_loss(ad::Tape<double> &, ad::ParamSet<double> &, UnrolledNet const &,
                                          LinearOperator const &, FilteredBackprojection const &, std::span<const float>,
                                          std::span<const float>, int, double, std::uint64_t, ad::Var<double> *);

TrainResult ei_train(UnrolledNet &net, LinearOperator const &op, FilteredBackprojection const &fbp,
                     std::vector<Measurement> const &train, TrainConfig const &cfg, EpochCallback const &cb)
{
  cfg.validate();
  if (train.empty()) { throw std::invalid_argument("empty training set"); }
  AdamState adam;
  adam.cfg.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick_g(1, 3);
  CallCounter counter;
  counter.rows_per_call = op.rows();
  TrainResult res;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t idx : shuffled(train.size(), rng)) {
      auto const &s = train[idx];
      ad::Tape<float> tape;
      tape.counter = &counter;
      int const g = pick_g(rng);
      auto loss = equivariant_loss<float>(tape, net.params(), net, op, fbp, s.b, s.x0, g, cfg.lambda_ei,
                                          cfg.seed + 2 * step);
      loss_sum += double(loss.value()[0]);
      net.params().zero_grad();
      tape.backward(loss);
      adam_step(net.params(), adam, lr_scale_at(cfg, epoch));
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train.size());
    rec.operator_calls = counter.total_equivalents();
    rec.val_psnr = std::numeric_limits<double>::quiet_NaN();
    rec.val_ssim = std::numeric_limits<double>::quiet_NaN();
    res.epochs.push_back(rec);
    maybe_checkpoint(cfg, net, epoch);
    if (cb) { cb(rec, net); }
  }
  return res;
}

void AdaptResult::write_csv(std::filesystem::path const &path) const
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "# psnr peak = max(ref) - min(ref)\n";
  os << "step,operator_calls,loss,psnr\n";
  os.precision(10);
  for (auto const &p : trace) { os << p.step << ',' << p.operator_calls << ',' << p.loss << ',' << p.psnr << '\n'; }
}

AdaptResult instance_adapt(UnrolledNet const &pretrained, LinearOperator const &op, FilteredBackprojection const &fbp,
                           std::span<const float> b, std::span<const float> x0, TrainConfig const &cfg,
                           std::span<const float> reference)
{
  cfg.validate();
  AdaptResult res{pretrained, {}, {}};
  UnrolledNet &net = res.net;
  AdamState adam;
  adam.cfg.lr = cfg.adapt_lr;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick_g(1, 3);
  CallCounter counter;
  counter.rows_per_call = op.rows();
  auto score = [&](Vec const &x) {
    return reference.empty() ? std::numeric_limits<double>::quiet_NaN() : psnr(x, reference);
  };
  for (int step = 0; step < cfg.adapt_steps; ++step) {
    double const calls_before = counter.total_equivalents();
    ad::Tape<float> tape;
    tape.counter = &counter;
    ad::Var<float> x1;
    int const g = pick_g(rng);
    auto loss = equivariant_loss<float>(tape, net.params(), net, op, fbp, b, x0, g, cfg.lambda_adapt,
                                        cfg.seed + 2 * std::uint64_t(step), &x1);
    res.trace.push_back({step, calls_before, double(loss.value()[0]), score(x1.value().data())});
    net.params().zero_grad();
    tape.backward(loss);
    if (cfg.freeze_dual) {
      for (std::size_t k = 0; k < net.params().size(); ++k) {
        auto &p = net.params()[k];
        if (p.name.find(".dual.") != std::string::npos || p.name.find(".sigma") != std::string::npos) {
          p.grad.fill(0.0f);
        }
      }
    }
    adam_step(net.params(), adam);
  }
  res.output = net.reconstruct(op, b, x0, ForwardOptions{cfg.seed + 2 * std::uint64_t(cfg.adapt_steps), false});
  res.trace.push_back({cfg.adapt_steps, counter.total_equivalents(), std::numeric_limits<double>::quiet_NaN(),
                       score(res.output)});
  return res;
}

} // namespace lspd
