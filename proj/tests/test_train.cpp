#include <doctest.h>

#include "lspd/fbp.hpp"
#include "lspd/metrics.hpp"
#include "lspd/simdata.hpp"
#include "lspd/train.hpp"
#include "test_util.hpp"

using namespace lspd;
using testutil::randn;

template <typename T>
concept HasTruth = requires(T t) { t.truth; };
static_assert(HasTruth<Sample>);
static_assert(!HasTruth<Measurement>, "self-supervised inputs must not carry ground truth");

TEST_CASE("adam")
{
  SUBCASE("zero gradient leaves parameters unchanged")
  {
    ad::ParamSet<float> P;
    auto &w = P.add("w", ad::Tensor<float>(ad::Shape{1, 2, 2}, Vec{1, 2, 3, 4}));
    P.zero_grad();
    AdamState st;
    adam_step(P, st);
    CHECK(w.value.data() == Vec{1, 2, 3, 4});
    CHECK(st.t == 1);
    CHECK(st.m.at("w").size() == 4);
  }
  SUBCASE("first step closed form")
  {
    ad::ParamSet<double> P;
    auto &w = P.add("w", ad::Tensor<double>(ad::Shape{1, 1, 3}, VecD{0.5, -1.0, 2.0}));
    P.zero_grad();
    w.grad.data() = {0.3, -2.0, 1e-3};
    AdamState st;
    st.cfg.lr = 0.01;
    adam_step(P, st);
    VecD const g{0.3, -2.0, 1e-3}, x0{0.5, -1.0, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
      double const want = x0[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
      CHECK(w.value[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("quadratic bowl")
  {
    ad::ParamSet<double> P;
    auto &w = P.add("w", ad::Tensor<double>(ad::Shape{1, 1, 2}, VecD{1.0, 1.0}));
    AdamState st;
    st.cfg.lr = 0.01;
    VecD const c{0.3, 0.7}, a{1.0, 4.0};
    for (int k = 0; k < 500; ++k) {
      P.zero_grad();
      for (std::size_t i = 0; i < 2; ++i) { w.grad[i] = 2.0 * a[i] * (w.value[i] - c[i]); }
      adam_step(P, st);
    }
    MESSAGE("adam bowl: " << w.value[0] << " " << w.value[1]);
    CHECK(std::abs(w.value[0] - c[0]) <= 1e-4);
    CHECK(std::abs(w.value[1] - c[1]) <= 1e-4);
  }
  SUBCASE("non-finite gradient aborts before any change")
  {
    ad::ParamSet<float> P;
    auto &a = P.add("a", ad::Tensor<float>(ad::Shape{1, 1, 2}, Vec{1, 2}));
    auto &b = P.add("b", ad::Tensor<float>(ad::Shape{1, 1, 1}, Vec{3}));
    P.zero_grad();
    a.grad[0] = 1.0f;
    b.grad[0] = std::numeric_limits<float>::quiet_NaN();
    AdamState st;
    try {
      adam_step(P, st);
      FAIL("expected an exception");
    } catch (std::runtime_error const &e) {
      CHECK(std::string(e.what()).starts_with("gradient blow-up"));
    }
    CHECK(a.value.data() == Vec{1, 2});
    CHECK(b.value[0] == 3.0f);
  }
}

TEST_CASE("group actions")
{
  auto const x = randn(36, 1);
  auto y = x;
  for (int g = 0; g < 4; ++g) { y = apply_group_action(y, 6, 1); }
  CHECK(y == x);
  for (int g = 1; g < 4; ++g) {
    auto const r = apply_group_action(x, 6, g);
    // a permutation: same multiset of values, hence the same norm
    auto rs = r, xs = x;
    std::sort(rs.begin(), rs.end());
    std::sort(xs.begin(), xs.end());
    CHECK(rs == xs);
    CHECK(norm2<float>(r) == doctest::Approx(norm2<float>(x)).epsilon(1e-12));
    CHECK(apply_group_action(r, 6, 4 - g) == x);
  }
  // impulse at row 1, col 2 of a 4x4 grid; out[i][j] = in[N-1-j][i]
  Vec imp(16, 0.0f);
  imp[1 * 4 + 2] = 1.0f;
  auto const r = apply_group_action(imp, 4, 1);
  // in[1][2] lands where N-1-j = 1 and i = 2, i.e. (i, j) = (2, 2)
  int const i_oracle = 2, j_oracle = 4 - 1 - 1;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) { CHECK(r[std::size_t(i * 4 + j)] == ((i == i_oracle && j == j_oracle) ? 1.0f : 0.0f)); }
  }
  CHECK_THROWS(apply_group_action(Vec(12), 4, 1));
}

namespace {

struct Setup
{
  ScanGeometry geom;
  LinearOperator op;
  Dataset ds;
};

Setup setup(int count, std::uint64_t seed, double angle_range = kPi)
{
  Setup s;
  s.geom = testutil::parallel_geometry(16, 16, 16);
  s.geom.angle_range = angle_range;
  s.op = assemble_projector(s.geom);
  s.op = s.op.with_partition(partition(s.op, 4));
  DatasetSpec spec;
  spec.geometry = s.geom;
  spec.count = count;
  spec.seed = seed;
  spec.val_fraction = 0.25;
  spec.test_fraction = 0.0;
  s.ds = build_dataset(spec, s.op);
  return s;
}

UnrollConfig small_config()
{
  UnrollConfig c;
  c.variant = Variant::lspd;
  c.layers = 2;
  c.subsets = 4;
  c.hidden = 4;
  c.kernel = 3;
  return c;
}

} // namespace

TEST_CASE("supervised training")
{
  auto s = setup(8, 3);
  SUBCASE("identity start has zero loss when the target is the input")
  {
    auto one = s.ds.split("train");
    one.resize(1);
    one[0].truth = one[0].x0;
    UnrolledNet net(small_config(), 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    auto const r = supervised_train(net, s.op, one, {}, cfg);
    CHECK(r.epochs.at(0).train_loss == 0.0);
  }
  SUBCASE("empty training set")
  {
    UnrolledNet net(small_config(), 1);
    CHECK_THROWS(supervised_train(net, s.op, {}, {}, TrainConfig{}));
  }
  SUBCASE("deterministic given a seed")
  {
    auto run = [&] {
      UnrolledNet net(small_config(), 1);
      TrainConfig cfg;
      cfg.epochs = 2;
      cfg.seed = 5;
      auto const r = supervised_train(net, s.op, s.ds.split("train"), s.ds.split("val"), cfg);
      std::vector<double> curve;
      for (auto const &e : r.epochs) {
        curve.push_back(e.train_loss);
        curve.push_back(e.val_psnr);
      }
      return curve;
    };
    auto const a = run();
    CHECK(a == run());
    CHECK(a.size() == 4);
  }
  SUBCASE("operator calls are counted")
  {
    UnrolledNet net(small_config(), 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    auto const tr = s.ds.split("train");
    auto const r = supervised_train(net, s.op, tr, {}, cfg);
    // forward 2K/m = 1; backward skips A^T of the first A x0 (x0 is a
    // constant), so it costs 2K/m - 1/m = 0.75
    CHECK(r.epochs[0].operator_calls == doctest::Approx(1.75 * double(tr.size())));
  }
}

TEST_CASE("equivariant objective")
{
  auto s = setup(4, 7);
  FilteredBackprojection const F(s.geom);
  auto const train = s.ds.split("train");
  auto const &smp = train.at(0);
  UnrolledNet net(small_config(), 2);
  auto P = net.params().cast<double>();

  SUBCASE("lambda = 0 is measurement consistency only")
  {
    ad::Tape<double> t;
    ad::Var<double> out;
    auto const l = equivariant_loss<double>(t, P, net, s.op, F, smp.b, smp.x0, 1, 0.0, 3, &out);
    // identity start: F(b) = x0
    auto const Ax = s.op.apply<double>(VecD(smp.x0.begin(), smp.x0.end()));
    double mc = 0.0;
    for (std::size_t r = 0; r < Ax.size(); ++r) { mc += std::pow(double(smp.b[r]) - Ax[r], 2); }
    mc /= double(s.op.cols());
    CHECK(l.value()[0] == doctest::Approx(mc).epsilon(1e-9));
    CHECK(out.value().data() == VecD(smp.x0.begin(), smp.x0.end()));
  }
  SUBCASE("exact reconstruction of consistent data has zero consistency term")
  {
    auto const &x = *smp.truth;
    auto const b = s.op.apply<float>(x);
    ad::Tape<double> t;
    auto const l = equivariant_loss<double>(t, P, net, s.op, F, b, x, 2, 0.0, 3);
    CHECK(l.value()[0] <= 1e-10);
  }
  SUBCASE("lambda < 0 is rejected")
  {
    TrainConfig cfg;
    cfg.lambda_ei = -1.0;
    CHECK_THROWS(ei_train(net, s.op, F, s.ds.measurements("train"), cfg));
  }
}

TEST_CASE("equivariance term is rotation invariant under full angular coverage")
{
  // 16 angles over [0, 2 pi): a quarter turn is a shift by 4 angles, so
  // A T_g = (shift) A and FBP commutes with T_g; with F the identity the
  // regulariser reads ||x0 - fbp(A x0)||^2 for every g.
  auto s = setup(2, 9, 2.0 * kPi);
  FilteredBackprojection const F(s.geom);
  auto const smp = s.ds.items.at(0);
  UnrolledNet net(small_config(), 2);
  auto P = net.params().cast<double>();
  auto reg = [&](int g) {
    ad::Tape<double> t;
    double const total = equivariant_loss<double>(t, P, net, s.op, F, smp.b, smp.x0, g, 1.0, 3).value()[0];
    ad::Tape<double> t0;
    double const mc = equivariant_loss<double>(t0, P, net, s.op, F, smp.b, smp.x0, g, 0.0, 3).value()[0];
    return total - mc;
  };
  double const r0 = reg(0);
  CHECK(r0 > 0.0);
  for (int g = 1; g < 4; ++g) { CHECK(std::abs(reg(g) - r0) <= 1e-5 * r0); }
}

TEST_CASE("self-supervised training never sees ground truth")
{
  auto s = setup(6, 11);
  auto const ms = s.ds.measurements("train");
  CHECK(!ms.empty());
  CHECK(!s.ds.without_truth().has_truth());
  FilteredBackprojection const F(s.geom);
  UnrolledNet net(small_config(), 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lambda_ei = 100.0;
  auto const r = ei_train(net, s.op, F, ms, cfg);
  CHECK(std::isnan(r.epochs.at(0).val_psnr));
  CHECK(std::isfinite(r.epochs.at(0).train_loss));
  CHECK(r.epochs.at(0).train_loss > 0.0);
}

TEST_CASE("instance adaptation")
{
  auto s = setup(4, 13);
  FilteredBackprojection const F(s.geom);
  UnrolledNet net(small_config(), 4);
  auto const smp = s.ds.items.at(0);
  TrainConfig cfg;
  cfg.adapt_steps = 0;
  auto const r0 = instance_adapt(net, s.op, F, smp.b, smp.x0, cfg, *smp.truth);
  CHECK(r0.output == net.reconstruct(s.op, smp.b, smp.x0, ForwardOptions{cfg.seed, false}));
  CHECK(r0.trace.size() == 1);

  cfg.adapt_steps = 3;
  auto const r3 = instance_adapt(net, s.op, F, smp.b, smp.x0, cfg, *smp.truth);
  REQUIRE(r3.trace.size() == 4);
  for (std::size_t k = 1; k < r3.trace.size(); ++k) {
    CHECK(r3.trace[k].step == int(k));
    CHECK(r3.trace[k].operator_calls > r3.trace[k - 1].operator_calls);
    CHECK(std::isfinite(r3.trace[k].psnr));
    CHECK(r3.trace[k - 1].loss > 0.0);
  }
  // the pretrained network is untouched
  CHECK(net.reconstruct(s.op, smp.b, smp.x0, ForwardOptions{cfg.seed, false}) == r0.output);
}
