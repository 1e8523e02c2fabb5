#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lspd/common.hpp"

namespace lspd {
class LinearOperator;
class FilteredBackprojection;
} // namespace lspd

namespace lspd::ad {

struct Shape
{
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const { return std::size_t(channels) * height * width; }
  bool operator==(Shape const &) const = default;
};

std::string to_string(Shape const &s);

template <typename T>
class Tensor
{
public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
    : shape_(shape)
    , data_(shape.size(), fill)
  {
  }
  Tensor(Shape shape, std::vector<T> data);

  Shape const &shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T> &data() { return data_; }
  std::vector<T> const &data() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T &at(int c, int i, int j) { return data_[(std::size_t(c) * shape_.height + i) * shape_.width + j]; }
  T at(int c, int i, int j) const { return data_[(std::size_t(c) * shape_.height + i) * shape_.width + j]; }

  std::span<T> channel(int c) { return std::span<T>(data_).subspan(std::size_t(c) * plane(), plane()); }
  std::span<const T> channel(int c) const { return std::span<const T>(data_).subspan(std::size_t(c) * plane(), plane()); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor reshaped(Shape s) const;

  template <typename U>
  Tensor<U> cast() const
  {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

private:
  std::size_t plane() const { return std::size_t(shape_.height) * shape_.width; }
  Shape shape_{0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
struct Parameter
{
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named, ordered parameter storage. Addresses of parameters are stable.
template <typename T>
class ParamSet
{
public:
  ParamSet() = default;
  ParamSet(ParamSet const &other);
  ParamSet &operator=(ParamSet const &other);
  ParamSet(ParamSet &&) noexcept = default;
  ParamSet &operator=(ParamSet &&) noexcept = default;

  Parameter<T> &add(std::string name, Tensor<T> value);
  Parameter<T> &get(std::string const &name);
  Parameter<T> const &get(std::string const &name) const;
  bool contains(std::string const &name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T> &operator[](std::size_t i) { return *params_[i]; }
  Parameter<T> const &operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;
  /// Copies values from `other` by name; shapes must match.
  void assign_values(ParamSet const &other);

  template <typename U>
  ParamSet<U> cast() const
  {
    ParamSet<U> out;
    for (auto const &p : params_) { out.add(p->name, p->value.template cast<U>()); }
    return out;
  }

private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
struct Var
{
  Tape<T> *tape = nullptr;
  int id = -1;

  Tensor<T> const &value() const;
  Tensor<T> const &grad() const;
  Shape const &shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted; backward walks it in reverse.
/// Single-writer: one thread records and differentiates a tape.
template <typename T>
class Tape
{
public:
  using Backward = std::function<void(Tape &, Tensor<T> const &grad_out)>;

  Tape() = default;
  Tape(Tape const &) = delete;
  Tape &operator=(Tape const &) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value); ///< leaf that receives a gradient
  Var<T> parameter(Parameter<T> &p);

  /// Appends a computed node. `backward` may be empty when no input needs a
  /// gradient.
  Var<T> record(Tensor<T> value, std::vector<int> inputs, Backward backward, double scalar = 0.0);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients
  /// accumulate across calls; node gradients are recomputed each call.
  void backward(Var<T> loss);

  Tensor<T> const &value(int id) const { return nodes_[id].value; }
  Tensor<T> const &grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Double-precision value of reduction nodes.
  double scalar(Var<T> v) const { return nodes_[v.id].scalar; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id` (allocating it).
  void accumulate(int id, std::span<const T> g);
  /// Mutable gradient buffer of node `id`, zero-allocated on first use.
  std::span<T> grad_buffer(int id);

  CallCounter *counter = nullptr;

private:
  struct Node
  {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    Backward backward;
    Parameter<T> *param = nullptr;
    bool requires_grad = false;
    double scalar = 0.0;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All inputs must live on the same tape.

enum class Direction
{
  forward,
  adjoint
};

/// Same-padded stride-1 convolution; weight (cout, cin*k, k) stored as
/// Shape{cout, cin * k, k}, bias Shape{cout, 1, 1}.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int kernel);

/// prelu(x) = x for x >= 0, alpha_c * x otherwise; alpha has one entry per channel.
template <typename T>
Var<T> prelu(Var<T> x, Var<T> alpha);

template <typename T>
Var<T> concat_channels(std::vector<Var<T>> const &xs);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
/// x * s for a one-element tensor s.
template <typename T>
Var<T> scale(Var<T> x, Var<T> s);
/// x * c for a fixed constant c.
template <typename T>
Var<T> scale(Var<T> x, double c);
template <typename T>
Var<T> sum(std::vector<Var<T>> const &xs);

/// Applies the operator (or its transpose) to a tensor. The image side has
/// the operator's domain shape; the measurement side has
/// (1, rows / range_width, range_width).
template <typename T>
Var<T> linear_op(Var<T> x, LinearOperator const &op, std::optional<int> subset, Direction dir);

/// S_i b: the rows of a full measurement that belong to subset i.
template <typename T>
Var<T> restrict_rows(Var<T> b, LinearOperator const &op, int subset);

/// Filtered backprojection of a measurement (linear; backward uses its adjoint).
template <typename T>
Var<T> fbp(Var<T> b, FilteredBackprojection const &fbp);

/// Exact rotation of every channel by quarter_turns * 90 degrees.
template <typename T>
Var<T> rotate90(Var<T> x, int quarter_turns);

/// sum(x^2), reduced in double precision.
template <typename T>
Var<T> sum_squares(Var<T> x);
/// mean(x^2), reduced in double precision.
template <typename T>
Var<T> mean_squares(Var<T> x);
/// <c, x> for a fixed tensor c.
template <typename T>
Var<T> dot_const(Var<T> x, Tensor<T> const &c);
template <typename T>
Var<T> sum_all(Var<T> x);

/// Exact quarter-turn rotation of a square image plane:
/// out[i][j] = in[N-1-j][i] for one turn (counter-clockwise in the
/// projector's coordinate frame).
template <typename T>
Tensor<T> rotate90(Tensor<T> const &x, int quarter_turns);

} // namespace lspd::ad
