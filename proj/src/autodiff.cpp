#include "lspd/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

#include <malloc.h>

#include "lspd/fbp.hpp"
#include "lspd/kernels.hpp"
#include "lspd/linops.hpp"

namespace lspd::ad {

namespace {

// Every training step allocates and frees several multi-megabyte im2col
// buffers. Above glibc's default mmap threshold each of those is a fresh
// mapping that has to be faulted in again; keep them on the heap instead.
[[maybe_unused]] bool const kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();

} // namespace

std::string to_string(Shape const &s)
{
  return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " + std::to_string(s.width) + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
  : shape_(shape)
  , data_(std::move(data))
{
  if (data_.size() != shape_.size()) {
    throw std::invalid_argument("tensor data size does not match shape " + to_string(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape s) const
{
  if (s.size() != size()) { throw std::invalid_argument("reshape to " + to_string(s) + " changes size"); }
  return Tensor(s, data_);
}

// ---------------------------------------------------------------------------

template <typename T>
ParamSet<T>::ParamSet(ParamSet const &other)
{
  for (auto const &p : other.params_) { add(p->name, p->value).grad = p->grad; }
}

template <typename T>
ParamSet<T> &ParamSet<T>::operator=(ParamSet const &other)
{
  if (this != &other) {
    params_.clear();
    index_.clear();
    for (auto const &p : other.params_) { add(p->name, p->value).grad = p->grad; }
  }
  return *this;
}

template <typename T>
Parameter<T> &ParamSet<T>::add(std::string name, Tensor<T> value)
{
  if (index_.count(name)) { throw std::invalid_argument("duplicate parameter name: " + name); }
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Tensor<T>(value.shape());
  p->value = std::move(value);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T> &ParamSet<T>::get(std::string const &name)
{
  auto it = index_.find(name);
  if (it == index_.end()) { throw std::out_of_range("no parameter named " + name); }
  return *params_[it->second];
}

template <typename T>
Parameter<T> const &ParamSet<T>::get(std::string const &name) const
{
  auto it = index_.find(name);
  if (it == index_.end()) { throw std::out_of_range("no parameter named " + name); }
  return *params_[it->second];
}

template <typename T>
void ParamSet<T>::zero_grad()
{
  for (auto &p : params_) { p->grad.fill(T(0)); }
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const
{
  std::size_t n = 0;
  for (auto const &p : params_) { n += p->value.size(); }
  return n;
}

template <typename T>
void ParamSet<T>::assign_values(ParamSet const &other)
{
  for (auto const &p : other.params_) {
    auto &dst = get(p->name);
    if (!(dst.value.shape() == p->value.shape())) {
      throw std::invalid_argument("parameter " + p->name + " has shape " + to_string(p->value.shape()) +
                                  ", expected " + to_string(dst.value.shape()));
    }
    dst.value = p->value;
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> const &Var<T>::value() const
{
  return tape->value(id);
}

template <typename T>
Tensor<T> const &Var<T>::grad() const
{
  return tape->grad(id);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value)
{
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value)
{
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T> &p)
{
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<int> inputs, Backward backward, double scalar)
{
  Node n;
  n.value = std::move(value);
  n.scalar = scalar;
  for (int in : inputs) {
    if (in < 0 || in >= int(nodes_.size())) { throw std::logic_error("tape input id out of range"); }
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) { n.backward = std::move(backward); }
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

template <typename T>
std::span<T> Tape<T>::grad_buffer(int id)
{
  Node &n = nodes_[id];
  if (n.grad.empty()) { n.grad = Tensor<T>(n.value.shape()); }
  return n.grad.values();
}

template <typename T>
void Tape<T>::accumulate(int id, std::span<const T> g)
{
  if (!nodes_[id].requires_grad) { return; }
  auto buf = grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) { buf[i] += g[i]; }
}

template <typename T>
void Tape<T>::backward(Var<T> loss)
{
  if (loss.tape != this) { throw std::invalid_argument("loss is not on this tape"); }
  if (nodes_[loss.id].value.size() != 1) { throw std::invalid_argument("backward requires a scalar loss"); }
  for (auto &n : nodes_) { n.grad = Tensor<T>(); }
  if (!nodes_[loss.id].requires_grad) { return; }
  grad_buffer(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node &n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) { continue; }
    if (n.param) {
      auto dst = n.param->grad.values();
      auto src = n.grad.values();
      for (std::size_t i = 0; i < src.size(); ++i) { dst[i] += src[i]; }
    }
    if (n.backward) { n.backward(*this, n.grad); }
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_same_tape(Var<T> a, Var<T> b)
{
  if (a.tape != b.tape) { throw std::invalid_argument("variables live on different tapes"); }
}

} // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int kernel)
{
  check_same_tape(x, weight);
  check_same_tape(x, bias);
  Shape const xs = x.shape();
  Shape const ws = weight.shape();
  int const cout = ws.channels;
  if (ws.height != xs.channels * kernel || ws.width != kernel) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(xs.channels) + " channels, weight expects " +
                                std::to_string(ws.height / std::max(kernel, 1)));
  }
  if (bias.value().size() != std::size_t(cout)) { throw std::invalid_argument("conv2d: bias size mismatch"); }
  Tensor<T> y(Shape{cout, xs.height, xs.width});
  auto cols = std::make_shared<std::vector<T>>();
  kernels::conv2d_forward<T>(x.value().values(), xs.channels, xs.height, xs.width, weight.value().values(),
                             bias.value().values(), cout, kernel, y.values(), *cols);
  int const xid = x.id, wid = weight.id, bid = bias.id;
  return x.tape->record(std::move(y), {xid, wid, bid}, [=](Tape<T> &t, Tensor<T> const &g) {
    std::span<T> gx, gw, gb;
    if (t.requires_grad(xid)) { gx = t.grad_buffer(xid); }
    if (t.requires_grad(wid)) { gw = t.grad_buffer(wid); }
    if (t.requires_grad(bid)) { gb = t.grad_buffer(bid); }
    kernels::conv2d_backward<T>(g.values(), *cols, xs.channels, xs.height, xs.width, t.value(wid).values(), cout,
                                kernel, gx, gw, gb);
  });
}

template <typename T>
Var<T> prelu(Var<T> x, Var<T> alpha)
{
  check_same_tape(x, alpha);
  Shape const s = x.shape();
  if (alpha.value().size() != std::size_t(s.channels)) { throw std::invalid_argument("prelu: one slope per channel"); }
  Tensor<T> y(s);
  auto const &xv = x.value();
  auto const &av = alpha.value();
  std::size_t const plane = std::size_t(s.height) * s.width;
  for (int c = 0; c < s.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      T const v = xv[c * plane + p];
      y[c * plane + p] = v >= T(0) ? v : av[c] * v;
    }
  }
  int const xid = x.id, aid = alpha.id;
  return x.tape->record(std::move(y), {xid, aid}, [=](Tape<T> &t, Tensor<T> const &g) {
    auto const &xv = t.value(xid);
    auto const &av = t.value(aid);
    bool const need_x = t.requires_grad(xid);
    bool const need_a = t.requires_grad(aid);
    std::span<T> gx = need_x ? t.grad_buffer(xid) : std::span<T>();
    std::span<T> ga = need_a ? t.grad_buffer(aid) : std::span<T>();
    for (int c = 0; c < s.channels; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        std::size_t const i = c * plane + p;
        T const v = xv[i];
        if (v >= T(0)) {
          if (need_x) { gx[i] += g[i]; }
        } else {
          if (need_x) { gx[i] += av[c] * g[i]; }
          acc += double(g[i]) * double(v);
        }
      }
      if (need_a) { ga[c] += T(acc); }
    }
  });
}

template <typename T>
Var<T> concat_channels(std::vector<Var<T>> const &xs)
{
  if (xs.empty()) { throw std::invalid_argument("concat_channels: no inputs"); }
  Shape out = xs.front().shape();
  out.channels = 0;
  std::vector<int> ids;
  for (auto const &v : xs) {
    check_same_tape(xs.front(), v);
    if (v.shape().height != out.height || v.shape().width != out.width) {
      throw std::invalid_argument("concat_channels: spatial mismatch " + to_string(v.shape()) + " vs " +
                                  to_string(xs.front().shape()));
    }
    out.channels += v.shape().channels;
    ids.push_back(v.id);
  }
  Tensor<T> y(out);
  std::size_t off = 0;
  for (auto const &v : xs) {
    auto src = v.value().values();
    std::copy(src.begin(), src.end(), y.values().begin() + std::ptrdiff_t(off));
    off += src.size();
  }
  return xs.front().tape->record(std::move(y), ids, [ids](Tape<T> &t, Tensor<T> const &g) {
    std::size_t off = 0;
    for (int id : ids) {
      std::size_t const n = t.value(id).size();
      t.accumulate(id, g.values().subspan(off, n));
      off += n;
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
  check_same_tape(a, b);
  if (!(a.shape() == b.shape())) { throw std::invalid_argument("add: shape mismatch"); }
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) { y[i] = a.value()[i] + b.value()[i]; }
  int const aid = a.id, bid = b.id;
  return a.tape->record(std::move(y), {aid, bid}, [=](Tape<T> &t, Tensor<T> const &g) {
    t.accumulate(aid, g.values());
    t.accumulate(bid, g.values());
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b)
{
  check_same_tape(a, b);
  if (!(a.shape() == b.shape())) { throw std::invalid_argument("sub: shape mismatch"); }
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) { y[i] = a.value()[i] - b.value()[i]; }
  int const aid = a.id, bid = b.id;
  return a.tape->record(std::move(y), {aid, bid}, [=](Tape<T> &t, Tensor<T> const &g) {
    t.accumulate(aid, g.values());
    if (t.requires_grad(bid)) {
      auto gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < gb.size(); ++i) { gb[i] -= g[i]; }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, Var<T> s)
{
  check_same_tape(x, s);
  if (s.value().size() != 1) { throw std::invalid_argument("scale: factor must have one element"); }
  T const f = s.value()[0];
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) { y[i] = x.value()[i] * f; }
  int const xid = x.id, sid = s.id;
  return x.tape->record(std::move(y), {xid, sid}, [=](Tape<T> &t, Tensor<T> const &g) {
    if (t.requires_grad(xid)) {
      auto gx = t.grad_buffer(xid);
      for (std::size_t i = 0; i < gx.size(); ++i) { gx[i] += g[i] * f; }
    }
    if (t.requires_grad(sid)) {
      auto const &xv = t.value(xid);
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) { acc += double(g[i]) * double(xv[i]); }
      t.grad_buffer(sid)[0] += T(acc);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, double c)
{
  T const f = T(c);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) { y[i] = x.value()[i] * f; }
  int const xid = x.id;
  return x.tape->record(std::move(y), {xid}, [=](Tape<T> &t, Tensor<T> const &g) {
    auto gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) { gx[i] += g[i] * f; }
  });
}

template <typename T>
Var<T> sum(std::vector<Var<T>> const &xs)
{
  if (xs.empty()) { throw std::invalid_argument("sum: no inputs"); }
  Tensor<T> y = xs.front().value();
  std::vector<int> ids{xs.front().id};
  for (std::size_t k = 1; k < xs.size(); ++k) {
    check_same_tape(xs.front(), xs[k]);
    if (!(xs[k].shape() == y.shape())) { throw std::invalid_argument("sum: shape mismatch"); }
    for (std::size_t i = 0; i < y.size(); ++i) { y[i] += xs[k].value()[i]; }
    ids.push_back(xs[k].id);
  }
  return xs.front().tape->record(std::move(y), ids, [ids](Tape<T> &t, Tensor<T> const &g) {
    for (int id : ids) { t.accumulate(id, g.values()); }
  });
}

template <typename T>
Var<T> linear_op(Var<T> x, LinearOperator const &op, std::optional<int> subset, Direction dir)
{
  LinearOperator const *A = &op;
  int const rows = op.subset_rows(subset);
  Shape const image{1, op.domain_height(), op.domain_width()};
  Shape const meas{1, rows / op.range_width(), op.range_width()};
  Tape<T> *tape = x.tape;
  int const xid = x.id;
  if (dir == Direction::forward) {
    if (x.value().size() != std::size_t(op.cols())) { throw std::invalid_argument("linear_op: dimension mismatch"); }
    Tensor<T> y(meas, op.apply<T>(x.value().values(), subset, tape->counter));
    return tape->record(std::move(y), {xid}, [=](Tape<T> &t, Tensor<T> const &g) {
      t.accumulate(xid, A->adjoint<T>(g.values(), subset, t.counter));
    });
  }
  if (x.value().size() != std::size_t(rows)) { throw std::invalid_argument("linear_op: dimension mismatch"); }
  Tensor<T> y(image, op.adjoint<T>(x.value().values(), subset, tape->counter));
  return tape->record(std::move(y), {xid}, [=](Tape<T> &t, Tensor<T> const &g) {
    t.accumulate(xid, A->apply<T>(g.values(), subset, t.counter));
  });
}

template <typename T>
Var<T> restrict_rows(Var<T> b, LinearOperator const &op, int subset)
{
  LinearOperator const *A = &op;
  int const rows = op.subset_rows(subset);
  Shape const meas{1, rows / op.range_width(), op.range_width()};
  Tensor<T> y(meas, op.restrict_rows<T>(b.value().values(), subset));
  int const bid = b.id;
  return b.tape->record(std::move(y), {bid}, [=](Tape<T> &t, Tensor<T> const &g) {
    if (!t.requires_grad(bid)) { return; }
    std::vector<T> full(std::size_t(A->rows()), T(0));
    A->scatter_rows<T>(g.values(), subset, full);
    t.accumulate(bid, full);
  });
}

template <typename T>
Var<T> fbp(Var<T> b, FilteredBackprojection const &F)
{
  FilteredBackprojection const *Fp = &F;
  int const N = F.geometry().image_size;
  Tensor<T> y(Shape{1, N, N}, F.apply<T>(b.value().values()));
  int const bid = b.id;
  return b.tape->record(std::move(y), {bid}, [=](Tape<T> &t, Tensor<T> const &g) {
    t.accumulate(bid, Fp->adjoint<T>(g.values()));
  });
}

template <typename T>
Tensor<T> rotate90(Tensor<T> const &x, int quarter_turns)
{
  Shape const s = x.shape();
  if (s.height != s.width) { throw std::invalid_argument("group action requires a square image"); }
  int const N = s.height;
  int const k = ((quarter_turns % 4) + 4) % 4;
  Tensor<T> y(s);
  for (int c = 0; c < s.channels; ++c) {
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        int si = i, sj = j;
        // out[i][j] = in[N-1-j][i], composed k times
        for (int r = 0; r < k; ++r) {
          int const ti = N - 1 - sj;
          int const tj = si;
          si = ti;
          sj = tj;
        }
        y.at(c, i, j) = x.at(c, si, sj);
      }
    }
  }
  return y;
}

template <typename T>
Var<T> rotate90(Var<T> x, int quarter_turns)
{
  int const xid = x.id;
  return x.tape->record(rotate90(x.value(), quarter_turns), {xid}, [=](Tape<T> &t, Tensor<T> const &g) {
    t.accumulate(xid, rotate90(g, -quarter_turns).values());
  });
}

template <typename T>
Var<T> sum_squares(Var<T> x)
{
  double s = 0.0;
  for (T v : x.value().values()) { s += double(v) * double(v); }
  int const xid = x.id;
  return x.tape->record(Tensor<T>(Shape{1, 1, 1}, T(s)), {xid},
                        [=](Tape<T> &t, Tensor<T> const &g) {
                          auto const &xv = t.value(xid);
                          auto gx = t.grad_buffer(xid);
                          T const f = T(2) * g[0];
                          for (std::size_t i = 0; i < gx.size(); ++i) { gx[i] += f * xv[i]; }
                        },
                        s);
}

template <typename T>
Var<T> mean_squares(Var<T> x)
{
  double s = 0.0;
  for (T v : x.value().values()) { s += double(v) * double(v); }
  double const n = double(x.value().size());
  s /= n;
  int const xid = x.id;
  return x.tape->record(Tensor<T>(Shape{1, 1, 1}, T(s)), {xid},
                        [=](Tape<T> &t, Tensor<T> const &g) {
                          auto const &xv = t.value(xid);
                          auto gx = t.grad_buffer(xid);
                          T const f = T(2.0 * double(g[0]) / n);
                          for (std::size_t i = 0; i < gx.size(); ++i) { gx[i] += f * xv[i]; }
                        },
                        s);
}

template <typename T>
Var<T> dot_const(Var<T> x, Tensor<T> const &c)
{
  if (c.size() != x.value().size()) { throw std::invalid_argument("dot_const: size mismatch"); }
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) { s += double(c[i]) * double(x.value()[i]); }
  int const xid = x.id;
  auto cc = std::make_shared<Tensor<T>>(c);
  return x.tape->record(Tensor<T>(Shape{1, 1, 1}, T(s)), {xid},
                        [=](Tape<T> &t, Tensor<T> const &g) {
                          auto gx = t.grad_buffer(xid);
                          for (std::size_t i = 0; i < gx.size(); ++i) { gx[i] += g[0] * (*cc)[i]; }
                        },
                        s);
}

template <typename T>
Var<T> sum_all(Var<T> x)
{
  double s = 0.0;
  for (T v : x.value().values()) { s += double(v); }
  int const xid = x.id;
  return x.tape->record(Tensor<T>(Shape{1, 1, 1}, T(s)), {xid},
                        [=](Tape<T> &t, Tensor<T> const &g) {
                          auto gx = t.grad_buffer(xid);
                          for (std::size_t i = 0; i < gx.size(); ++i) { gx[i] += g[0]; }
                        },
                        s);
}

#define LSPD_AD_INSTANTIATE(T)                                                                 \
  template class Tensor<T>;                                                                    \
  template class ParamSet<T>;                                                                  \
  template struct Var<T>;                                                                      \
  template class Tape<T>;                                                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int);                                         \
  template Var<T> prelu(Var<T>, Var<T>);                                                       \
  template Var<T> concat_channels(std::vector<Var<T>> const &);                                \
  template Var<T> add(Var<T>, Var<T>);                                                         \
  template Var<T> sub(Var<T>, Var<T>);                                                         \
  template Var<T> scale(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, double);                                                       \
  template Var<T> sum(std::vector<Var<T>> const &);                                            \
  template Var<T> linear_op(Var<T>, LinearOperator const &, std::optional<int>, Direction);    \
  template Var<T> restrict_rows(Var<T>, LinearOperator const &, int);                          \
  template Var<T> fbp(Var<T>, FilteredBackprojection const &);                                 \
  template Tensor<T> rotate90(Tensor<T> const &, int);                                         \
  template Var<T> rotate90(Var<T>, int);                                                       \
  template Var<T> sum_squares(Var<T>);                                                         \
  template Var<T> mean_squares(Var<T>);                                                        \
  template Var<T> dot_const(Var<T>, Tensor<T> const &);                                        \
  template Var<T> sum_all(Var<T>);

LSPD_AD_INSTANTIATE(float)
LSPD_AD_INSTANTIATE(double)

} // namespace lspd::ad
