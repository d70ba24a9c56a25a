#pragma once

// Reverse-mode differentiation over dense row-major real arrays.
//
// A Graph is a tape: every op appends a node whose inputs were recorded
// before it, so walking the node list backwards is a valid reverse
// topological order. Values are computed eagerly.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace madiff::dg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view: rank 0 is 1x1, rank 1 is a 1xn row, rank 2 is itself.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  // Scalar value of a single-element tensor.
  double item() const;

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }
  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Trainable array plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Insertion-ordered parameter store with stable addresses.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
};

class Graph;

// Handle to a node on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int node)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Recording can be switched off for inference; values are still computed.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape and readable through grad().
  Var leaf(Tensor value);
  // Leaf whose gradient is accumulated into param.grad by backward().
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Gradient of a leaf (or any node) after backward; zeros if never reached.
  Tensor grad(Var v) const;

  // Seeds d(out) = 1 for a single-element output.
  void backward(Var out);
  // Seeds with an explicit tensor of out's shape. Consumes the tape: a
  // second call on the same graph throws std::logic_error.
  void backward(Var out, const Tensor& seed);

  std::size_t node_count() const { return nodes_.size(); }

  // Op-construction interface. `inputs` are node ids; `fn` is only kept
  // when some input requires a gradient and recording is enabled.
  Var record(Tensor value, std::initializer_list<int> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<int>& inputs, BackwardFn fn);

  // Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor& grad_buffer(int id);
  const Tensor& node_grad(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool consumed_ = false;
};

// ---- elementwise, with 2-D broadcasting (1xN rows, Mx1 columns, 1x1) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var negate(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var tanh(Var a);
Var square(Var a);
Var sqrt(Var a);
Var clamp_min(Var a, double lo);

// ---- linear algebra and layout ----
Var matmul(Var a, Var b);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// out[i] = a[index[i]]; backward scatter-adds.
Var gather_rows(Var a, const std::vector<std::size_t>& index);
Var broadcast_to(Var a, std::size_t rows, std::size_t cols);
// mask[i] != 0 selects b, otherwise a. mask has the output shape.
Var where(const Tensor& mask, Var a, Var b);

// Rows are grouped into consecutive blocks of `group` rows (one block per
// sequence). Row t of block g becomes row t-1 of that block; row 0 takes
// first[g].
Var shift_rows_in_groups(Var a, Var first, std::size_t group);
// Reverses row order inside each block of `group` rows.
Var reverse_rows_in_groups(Var a, std::size_t group);

// ---- reductions ----
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);   // MxN -> Mx1
Var col_sum(Var a);   // MxN -> 1xN
// Euclidean norm of each row, MxN -> Mx1. Subgradient 0 at the origin.
Var row_norm(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return negate(a); }

// Scalar helpers shared with non-graph code.
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace madiff::dg
