#include "madiff/diffgraph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace madiff::dg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims(const Tensor& t) { return shape_str({t.rows(), t.cols()}); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw std::invalid_argument("vars belong to different graphs");
  return *a.graph;
}

// Output extent of a broadcast binary op, validating conformance.
struct Broadcast {
  std::size_t rows, cols;
  bool a_row1, a_col1, b_row1, b_col1;
};

Broadcast broadcast_dims(const char* op, const Tensor& a, const Tensor& b) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  auto merge = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    shape_error(op, a, b);
  };
  const std::size_t r = merge(ar, br);
  const std::size_t c = merge(ac, bc);
  return {r, c, ar == 1 && r != 1, ac == 1 && c != 1, br == 1 && r != 1, bc == 1 && c != 1};
}

Shape out_shape(const Tensor& a, const Tensor& b, const Broadcast& bc) {
  if (a.shape() == b.shape()) return a.shape();
  return {bc.rows, bc.cols};
}

// Elementwise binary op. df(x, y, out) returns {d out/dx, d out/dy}.
template <class F, class DF>
Var binary(const char* name, Var av, Var bv, F f, DF df) {
  Graph& g = graph_of(av, bv);
  const Tensor& a = av.value();
  const Tensor& b = bv.value();
  const Broadcast bc = broadcast_dims(name, a, b);
  Tensor out(out_shape(a, b, bc));
  const std::size_t R = bc.rows, C = bc.cols;
  const std::size_t acs = a.cols(), bcs = b.cols();
  auto ai = [&](std::size_t i, std::size_t j) { return (bc.a_row1 ? 0 : i) * acs + (bc.a_col1 ? 0 : j); };
  auto bi = [&](std::size_t i, std::size_t j) { return (bc.b_row1 ? 0 : i) * bcs + (bc.b_col1 ? 0 : j); };
  const bool plain = !bc.a_row1 && !bc.a_col1 && !bc.b_row1 && !bc.b_col1;
  if (plain) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(a[k], b[k]);
  } else {
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) out[i * C + j] = f(a[ai(i, j)], b[bi(i, j)]);
  }
  const int ia = av.id, ib = bv.id;
  return g.record(std::move(out), {ia, ib}, [=](Graph& gr, int self) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(ib);
    const Tensor& o = gr.value(self);
    const Tensor& go = gr.node_grad(self);
    const bool need_a = gr.requires_grad(ia), need_b = gr.requires_grad(ib);
    Tensor* ga = need_a ? &gr.grad_buffer(ia) : nullptr;
    Tensor* gb = need_b ? &gr.grad_buffer(ib) : nullptr;
    const std::size_t xcs = x.cols(), ycs = y.cols();
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < C; ++j) {
        const std::size_t k = i * C + j;
        const std::size_t kx = (bc.a_row1 ? 0 : i) * xcs + (bc.a_col1 ? 0 : j);
        const std::size_t ky = (bc.b_row1 ? 0 : i) * ycs + (bc.b_col1 ? 0 : j);
        const auto [dx, dy] = df(x[kx], y[ky], o[k]);
        if (ga) (*ga)[kx] += go[k] * dx;
        if (gb) (*gb)[ky] += go[k] * dy;
      }
    }
  });
}

// Elementwise unary op. df(x, out) returns d out/dx.
template <class F, class DF>
Var unary(Var av, F f, DF df) {
  Graph& g = *av.graph;
  const Tensor& a = av.value();
  Tensor out(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = f(a[k]);
  const int ia = av.id;
  return g.record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& x = gr.value(ia);
    const Tensor& o = gr.value(self);
    const Tensor& go = gr.node_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t k = 0; k < x.size(); ++k) ga[k] += go[k] * df(x[k], o[k]);
  });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size())
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                shape_str(shape_));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() > 2) throw std::logic_error("matrix view of rank-" + std::to_string(shape_.size()) + " tensor");
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() > 2) throw std::logic_error("matrix view of rank-" + std::to_string(shape_.size()) + " tensor");
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------- ParameterSet

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor grad = Tensor::zeros_like(init);
  params_.push_back(Parameter{name, std::move(init), std::move(grad)});
  return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter& ParameterSet::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

// ----------------------------------------------------------------- Graph

const Tensor& Var::value() const { return graph->value(*this); }

const Tensor& Graph::value(Var v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw std::invalid_argument("var does not belong to this graph");
  return nodes_[v.id].value;
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, grad_enabled_});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, grad_enabled_});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::initializer_list<int> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<int>(inputs), std::move(fn));
}

Var Graph::record(Tensor value, const std::vector<int>& inputs, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_)
    for (int i : inputs) needs = needs || nodes_[i].requires_grad;
  Node n{std::move(value), {}, {}, nullptr, needs};
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) return n.grad;
  return Tensor::zeros_like(n.value);
}

void Graph::backward(Var out) {
  const Tensor& v = value(out);
  if (v.size() != 1)
    throw std::invalid_argument("backward without seed needs a single-element output, got " + shape_str(v.shape()));
  backward(out, Tensor(v.shape(), 1.0));
}

void Graph::backward(Var out, const Tensor& seed) {
  if (consumed_) throw std::logic_error("backward called twice on the same tape; build a new graph");
  const Tensor& v = value(out);
  if (seed.shape() != v.shape())
    throw std::invalid_argument("seed shape " + shape_str(seed.shape()) + " does not match output " +
                                shape_str(v.shape()));
  consumed_ = true;
  if (!nodes_[out.id].requires_grad) return;
  grad_buffer(out.id) = seed;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() != n.value.size()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      Tensor& pg = n.param->grad;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

// ------------------------------------------------------------ elementwise

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double x, double y, double) { return std::pair{y, x}; });
}

Var div(Var a, Var b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double x, double y, double) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Var negate(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var softplus(Var a) {
  return unary(a, softplus_value, [](double x, double) { return sigmoid_value(x); });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double, double o) { return o * (1.0 - o); });
}

Var silu(Var a) {
  return unary(
      a, [](double x) { return x * sigmoid_value(x); },
      [](double x, double) {
        const double s = sigmoid_value(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

Var clamp_min(Var a, double lo) {
  return unary(a, [lo](double x) { return x < lo ? lo : x; }, [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

// ------------------------------------------------------ linear algebra

Var matmul(Var av, Var bv) {
  Graph& g = graph_of(av, bv);
  const Tensor& a = av.value();
  const Tensor& b = bv.value();
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  Map(out.data(), m, n).noalias() = MapC(a.data(), m, k) * MapC(b.data(), k, n);
  const int ia = av.id, ib = bv.id;
  return g.record(std::move(out), {ia, ib}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    MapC dC(go.data(), m, n);
    if (gr.requires_grad(ia)) {
      Tensor& ga = gr.grad_buffer(ia);
      Map(ga.data(), m, k).noalias() += dC * MapC(gr.value(ib).data(), k, n).transpose();
    }
    if (gr.requires_grad(ib)) {
      Tensor& gb = gr.grad_buffer(ib);
      Map(gb.data(), k, n).noalias() += MapC(gr.value(ia).data(), m, k).transpose() * dC;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Graph& g = *parts.front().graph;
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.graph != &g) throw std::invalid_argument("concat_cols: vars belong to different graphs");
    if (p.rows() != R) shape_error("concat_cols", parts.front().value(), p.value());
    ids.push_back(p.id);
    offsets.push_back(C);
    C += p.cols();
  }
  Tensor out({R, C});
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Tensor& v = parts[q].value();
    const std::size_t pc = v.cols();
    for (std::size_t i = 0; i < R; ++i)
      std::copy_n(v.data() + i * pc, pc, out.data() + i * C + offsets[q]);
  }
  return g.record(std::move(out), ids, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (!gr.requires_grad(ids[q])) continue;
      Tensor& gp = gr.grad_buffer(ids[q]);
      const std::size_t pc = gp.cols();
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += go[i * C + offsets[q] + j];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Graph& g = *parts.front().graph;
  const std::size_t C = parts.front().cols();
  std::size_t R = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.graph != &g) throw std::invalid_argument("concat_rows: vars belong to different graphs");
    if (p.cols() != C) shape_error("concat_rows", parts.front().value(), p.value());
    ids.push_back(p.id);
    offsets.push_back(R);
    R += p.rows();
  }
  Tensor out({R, C});
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Tensor& v = parts[q].value();
    std::copy(v.data(), v.data() + v.size(), out.data() + offsets[q] * C);
  }
  return g.record(std::move(out), ids, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (!gr.requires_grad(ids[q])) continue;
      Tensor& gp = gr.grad_buffer(ids[q]);
      for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += go[offsets[q] * C + k];
    }
  });
}

Var slice_cols(Var av, std::size_t begin, std::size_t end) {
  const Tensor& a = av.value();
  if (begin > end || end > a.cols())
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + dims(a));
  const std::size_t R = a.rows(), C = a.cols(), W = end - begin;
  Tensor out({R, W});
  for (std::size_t i = 0; i < R; ++i) std::copy_n(a.data() + i * C + begin, W, out.data() + i * W);
  const int ia = av.id;
  return av.graph->record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < W; ++j) ga[i * C + begin + j] += go[i * W + j];
  });
}

Var slice_rows(Var av, std::size_t begin, std::size_t end) {
  const Tensor& a = av.value();
  if (begin > end || end > a.rows())
    throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + dims(a));
  const std::size_t C = a.cols();
  Tensor out({end - begin, C});
  std::copy(a.data() + begin * C, a.data() + end * C, out.data());
  const int ia = av.id;
  return av.graph->record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t k = 0; k < go.size(); ++k) ga[begin * C + k] += go[k];
  });
}

Var gather_rows(Var av, const std::vector<std::size_t>& index) {
  const Tensor& a = av.value();
  const std::size_t C = a.cols(), R = a.rows();
  Tensor out({index.size(), C});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= R)
      throw std::invalid_argument("gather_rows: index " + std::to_string(index[i]) + " outside " + dims(a));
    std::copy_n(a.data() + index[i] * C, C, out.data() + i * C);
  }
  const int ia = av.id;
  return av.graph->record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < C; ++j) ga[index[i] * C + j] += go[i * C + j];
  });
}

Var broadcast_to(Var av, std::size_t rows, std::size_t cols) {
  Tensor target({rows, cols}, 0.0);
  const Broadcast bc = broadcast_dims("broadcast", av.value(), target);
  if (bc.rows != rows || bc.cols != cols) shape_error("broadcast", av.value(), target);
  Var zero = av.graph->constant(std::move(target));
  return add(av, zero);
}

Var where(const Tensor& mask, Var av, Var bv) {
  Graph& g = graph_of(av, bv);
  const Tensor& a = av.value();
  const Tensor& b = bv.value();
  if (!a.same_shape(b)) shape_error("where", a, b);
  if (!mask.same_shape(a)) shape_error("where(mask)", mask, a);
  Tensor out(a.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = mask[k] != 0.0 ? b[k] : a[k];
  const int ia = av.id, ib = bv.id;
  return g.record(std::move(out), {ia, ib}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    if (gr.requires_grad(ia)) {
      Tensor& ga = gr.grad_buffer(ia);
      for (std::size_t k = 0; k < go.size(); ++k)
        if (mask[k] == 0.0) ga[k] += go[k];
    }
    if (gr.requires_grad(ib)) {
      Tensor& gb = gr.grad_buffer(ib);
      for (std::size_t k = 0; k < go.size(); ++k)
        if (mask[k] != 0.0) gb[k] += go[k];
    }
  });
}

Var shift_rows_in_groups(Var av, Var fv, std::size_t group) {
  Graph& g = graph_of(av, fv);
  const Tensor& a = av.value();
  const Tensor& f = fv.value();
  if (group == 0 || a.rows() % group != 0)
    throw std::invalid_argument("shift_rows_in_groups: " + std::to_string(a.rows()) + " rows not divisible by group " +
                                std::to_string(group));
  const std::size_t G = a.rows() / group, C = a.cols();
  if (f.rows() != G || f.cols() != C) shape_error("shift_rows_in_groups", a, f);
  Tensor out({a.rows(), C});
  for (std::size_t q = 0; q < G; ++q) {
    std::copy_n(f.data() + q * C, C, out.data() + q * group * C);
    for (std::size_t t = 1; t < group; ++t)
      std::copy_n(a.data() + (q * group + t - 1) * C, C, out.data() + (q * group + t) * C);
  }
  const int ia = av.id, ifirst = fv.id;
  return g.record(std::move(out), {ia, ifirst}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    if (gr.requires_grad(ia)) {
      Tensor& ga = gr.grad_buffer(ia);
      for (std::size_t q = 0; q < G; ++q)
        for (std::size_t t = 1; t < group; ++t)
          for (std::size_t j = 0; j < C; ++j) ga[(q * group + t - 1) * C + j] += go[(q * group + t) * C + j];
    }
    if (gr.requires_grad(ifirst)) {
      Tensor& gf = gr.grad_buffer(ifirst);
      for (std::size_t q = 0; q < G; ++q)
        for (std::size_t j = 0; j < C; ++j) gf[q * C + j] += go[q * group * C + j];
    }
  });
}

Var reverse_rows_in_groups(Var av, std::size_t group) {
  const Tensor& a = av.value();
  if (group == 0 || a.rows() % group != 0)
    throw std::invalid_argument("reverse_rows_in_groups: " + std::to_string(a.rows()) +
                                " rows not divisible by group " + std::to_string(group));
  std::vector<std::size_t> index(a.rows());
  for (std::size_t q = 0; q < a.rows() / group; ++q)
    for (std::size_t t = 0; t < group; ++t) index[q * group + t] = q * group + (group - 1 - t);
  return gather_rows(av, index);
}

// ------------------------------------------------------------ reductions

Var sum(Var av) {
  const Tensor& a = av.value();
  double s = 0.0;
  for (double x : a.values()) s += x;
  const int ia = av.id;
  return av.graph->record(Tensor::scalar(s), {ia}, [=](Graph& gr, int self) {
    const double go = gr.node_grad(self)[0];
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += go;
  });
}

Var mean(Var av) {
  const std::size_t n = av.value().size();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(av), 1.0 / static_cast<double>(n));
}

Var row_sum(Var av) {
  const Tensor& a = av.value();
  const std::size_t R = a.rows(), C = a.cols();
  Tensor out({R, 1});
  for (std::size_t i = 0; i < R; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += a[i * C + j];
    out[i] = s;
  }
  const int ia = av.id;
  return av.graph->record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += go[i];
  });
}

Var col_sum(Var av) {
  const Tensor& a = av.value();
  const std::size_t R = a.rows(), C = a.cols();
  Tensor out({1, C});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[j] += a[i * C + j];
  const int ia = av.id;
  return av.graph->record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += go[j];
  });
}

Var row_norm(Var av) {
  const Tensor& a = av.value();
  const std::size_t R = a.rows(), C = a.cols();
  Tensor out({R, 1});
  for (std::size_t i = 0; i < R; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += a[i * C + j] * a[i * C + j];
    out[i] = std::sqrt(s);
  }
  const int ia = av.id;
  return av.graph->record(std::move(out), {ia}, [=](Graph& gr, int self) {
    const Tensor& go = gr.node_grad(self);
    const Tensor& o = gr.value(self);
    const Tensor& x = gr.value(ia);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < R; ++i) {
      if (o[i] == 0.0) continue;
      const double f = go[i] / o[i];
      for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += f * x[i * C + j];
    }
  });
}

}  // namespace madiff::dg
