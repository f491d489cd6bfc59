#include "lsnpc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "lsnpc/special.hpp"

namespace lsnpc {

namespace {

Tensor as_matrix(const Tensor& t) {
  if (t.shape().size() == 2) return t;
  std::vector<double> data(t.data().begin(), t.data().end());
  return Tensor(Shape{t.rows(), t.cols()}, std::move(data));
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double broadcast_extent(std::size_t a, std::size_t b, bool& ok) {
  if (a == b) return static_cast<double>(a);
  if (a == 1) return static_cast<double>(b);
  if (b == 1) return static_cast<double>(a);
  ok = false;
  return 0;
}

// Sum `g` (rows x cols) down to the shape (tr x tc) of a broadcast operand.
void reduce_into(const Tensor& g, Tensor& target, double sign) {
  const std::size_t rows = g.rows(), cols = g.cols();
  const std::size_t tr = target.rows(), tc = target.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t rr = tr == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t cc = tc == 1 ? 0 : c;
      target(rr, cc) += sign * g(r, c);
    }
  }
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::MatMul: return "matmul";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Log1p: return "log1p";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Gelu: return "gelu";
    case Op::Relu: return "relu";
    case Op::LGamma: return "lgamma";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Clamp: return "clamp";
    case Op::SumAll: return "sum";
    case Op::MeanAll: return "mean";
    case Op::SumCols: return "sum_cols";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::LayerNorm: return "layer_norm";
  }
  return "?";
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  evaluated_ = false;
  return Var{this, NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)}};
}

Var Graph::input(const std::string& name) {
  Node n{Op::Input, {}};
  n.name = name;
  auto v = push(std::move(n));
  labels_[name] = v.id;
  return v;
}

Var Graph::param(const ParameterPtr& p) {
  if (!p) throw std::invalid_argument("null parameter");
  if (p->value.shape().size() != 2)
    throw std::invalid_argument("graph parameters must be rank-2, got " + shape_string(p->value.shape()) + " for " +
                                p->name);
  Node n{Op::Param, {}};
  n.name = p->name;
  n.param = p;
  return push(std::move(n));
}

Var Graph::constant(Tensor value, std::string label) {
  Node n{Op::Const, {}};
  n.value = as_matrix(value);
  n.name = std::move(label);
  return push(std::move(n));
}

Var Graph::unary(Op op, Var x, double a, double b) {
  if (x.graph != this) throw std::invalid_argument("operand belongs to a different graph");
  Node n{op, {x.id}};
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

Var Graph::binary(Op op, Var lhs, Var rhs) {
  if (lhs.graph != this || rhs.graph != this) throw std::invalid_argument("operand belongs to a different graph");
  return push(Node{op, {lhs.id, rhs.id}});
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Node n{Op::ConcatCols, {}};
  for (const auto& p : parts) {
    if (p.graph != this) throw std::invalid_argument("operand belongs to a different graph");
    n.inputs.push_back(p.id);
  }
  return push(std::move(n));
}

Var Graph::slice_cols(Var x, std::size_t begin, std::size_t end) {
  if (begin >= end) throw std::invalid_argument("empty column slice");
  Node n{Op::SliceCols, {x.id}};
  n.i0 = begin;
  n.i1 = end;
  return push(std::move(n));
}

void Graph::label(Var v, std::string name) {
  auto& node = nodes_.at(v.id.index);
  if (node.op != Op::Input && node.op != Op::Param) node.name = name;
  labels_[std::move(name)] = v.id;
}

std::optional<NodeId> Graph::find(const std::string& label) const {
  auto it = labels_.find(label);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

std::string Graph::describe(std::size_t index) const {
  std::ostringstream os;
  os << "node #" << index << " (" << op_name(nodes_[index].op);
  if (!nodes_[index].name.empty()) os << " '" << nodes_[index].name << "'";
  os << ')';
  return os.str();
}

const Tensor& Graph::value(NodeId id) const {
  const auto& n = nodes_.at(id.index);
  if (n.op == Op::Param) return n.param->value;
  return n.value;
}

const Tensor& Graph::grad(NodeId id) const { return nodes_.at(id.index).grad; }

void Graph::forward_node(std::size_t i, const Bindings& inputs) {
  Node& n = nodes_[i];
  auto in = [&](std::size_t k) -> const Tensor& { return value(n.inputs[k]); };
  auto fail = [&](const std::string& msg) { throw std::invalid_argument(describe(i) + ": " + msg); };

  switch (n.op) {
    case Op::Input: {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) fail("input not bound");
      n.value = as_matrix(it->second);
      return;
    }
    case Op::Param:
    case Op::Const:
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      bool ok = true;
      const auto rows = static_cast<std::size_t>(broadcast_extent(a.rows(), b.rows(), ok));
      const auto cols = static_cast<std::size_t>(broadcast_extent(a.cols(), b.cols(), ok));
      if (!ok) fail("incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
      n.value = Tensor(Shape{rows, cols});
      const bool ar = a.rows() == 1, ac = a.cols() == 1, br = b.rows() == 1, bc = b.cols() == 1;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double x = a(ar ? 0 : r, ac ? 0 : c);
          const double y = b(br ? 0 : r, bc ? 0 : c);
          double v = 0;
          switch (n.op) {
            case Op::Add: v = x + y; break;
            case Op::Sub: v = x - y; break;
            case Op::Mul: v = x * y; break;
            default: v = x / y; break;
          }
          n.value(r, c) = v;
        }
      return;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.rows())
        fail("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
      const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
      n.value = Tensor(Shape{rows, cols});
      for (std::size_t r = 0; r < rows; ++r) {
        double* out = &n.value(r, 0);
        for (std::size_t k = 0; k < inner; ++k) {
          const double av = a(r, k);
          if (av == 0.0) continue;
          const double* brow = b.data().data() + k * cols;
          for (std::size_t c = 0; c < cols; ++c) out[c] += av * brow[c];
        }
      }
      return;
    }
    case Op::SumAll:
    case Op::MeanAll: {
      const Tensor& a = in(0);
      double s = 0;
      for (double v : a.data()) s += v;
      if (n.op == Op::MeanAll) s /= static_cast<double>(a.numel());
      n.value = Tensor::scalar(s);
      return;
    }
    case Op::SumCols: {
      const Tensor& a = in(0);
      n.value = Tensor(Shape{a.rows(), 1});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0;
        for (double v : a.row_span(r)) s += v;
        n.value(r, 0) = s;
      }
      return;
    }
    case Op::ConcatCols: {
      std::size_t rows = 0, cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& t = in(k);
        if (k == 0) rows = t.rows();
        if (t.rows() != rows && t.rows() != 1)
          fail("concat row count mismatch: " + std::to_string(t.rows()) + " vs " + std::to_string(rows));
        if (rows == 1 && t.rows() != 1) rows = t.rows();
        cols += t.cols();
      }
      for (std::size_t k = 0; k < n.inputs.size(); ++k)
        if (in(k).rows() != rows && in(k).rows() != 1) fail("concat row count mismatch");
      n.value = Tensor(Shape{rows, cols});
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& t = in(k);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < t.cols(); ++c) n.value(r, off + c) = t(t.rows() == 1 ? 0 : r, c);
        off += t.cols();
      }
      return;
    }
    case Op::SliceCols: {
      const Tensor& a = in(0);
      if (n.i1 > a.cols()) fail("column slice [" + std::to_string(n.i0) + "," + std::to_string(n.i1) +
                                ") out of range for " + shape_string(a.shape()));
      n.value = Tensor(Shape{a.rows(), n.i1 - n.i0});
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = n.i0; c < n.i1; ++c) n.value(r, c - n.i0) = a(r, c);
      return;
    }
    case Op::LayerNorm: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      const auto cols = static_cast<double>(a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double mu = 0;
        for (double v : a.row_span(r)) mu += v;
        mu /= cols;
        double var = 0;
        for (double v : a.row_span(r)) var += (v - mu) * (v - mu);
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + n.a);
        for (std::size_t c = 0; c < a.cols(); ++c) n.value(r, c) = (a(r, c) - mu) * inv;
      }
      return;
    }
    default:
      break;
  }

  // Elementwise unary ops.
  const Tensor& a = in(0);
  n.value = Tensor(a.shape());
  auto src = a.data();
  auto dst = n.value.data();
  for (std::size_t j = 0; j < src.size(); ++j) {
    const double x = src[j];
    double v = 0;
    switch (n.op) {
      case Op::Neg: v = -x; break;
      case Op::Exp: v = std::exp(x); break;
      case Op::Log: v = std::log(x); break;
      case Op::Log1p: v = std::log1p(x); break;
      case Op::Sqrt: v = std::sqrt(x); break;
      case Op::Square: v = x * x; break;
      case Op::Sigmoid: v = stable_sigmoid(x); break;
      case Op::Softplus: v = stable_softplus(x); break;
      case Op::Gelu: v = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); break;
      case Op::Relu: v = x > 0 ? x : 0.0; break;
      case Op::LGamma: v = x > 0 ? std::lgamma(x) : std::numeric_limits<double>::quiet_NaN(); break;
      case Op::Scale: v = x * n.a; break;
      case Op::Shift: v = x + n.a; break;
      case Op::Clamp: v = std::clamp(x, n.a, n.b); break;
      default: fail("unhandled op"); break;
    }
    dst[j] = v;
  }
}

EvalResult Graph::eval(const Bindings& inputs) {
  if (nodes_.empty()) throw std::logic_error("eval of empty graph");
  EvalResult result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    forward_node(i, inputs);
    if (result.finite && !value(NodeId{static_cast<std::uint32_t>(i)}).all_finite()) {
      result.finite = false;
      result.nonfinite_node = describe(i);
    }
  }
  evaluated_ = true;
  result.value = value(output_);
  return result;
}

void Graph::backward_node(std::size_t i) {
  Node& n = nodes_[i];
  const Tensor& g = n.grad;
  auto in = [&](std::size_t k) -> const Tensor& { return value(n.inputs[k]); };
  auto gin = [&](std::size_t k) -> Tensor& { return nodes_[n.inputs[k].index].grad; };

  switch (n.op) {
    case Op::Input:
    case Op::Const:
      return;
    case Op::Param:
      for (std::size_t j = 0; j < g.numel(); ++j) n.param->grad[j] += g[j];
      return;
    case Op::Add:
      reduce_into(g, gin(0), 1.0);
      reduce_into(g, gin(1), 1.0);
      return;
    case Op::Sub:
      reduce_into(g, gin(0), 1.0);
      reduce_into(g, gin(1), -1.0);
      return;
    case Op::Mul:
    case Op::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor ga(g.shape()), gb(g.shape());
      const bool ar = a.rows() == 1, ac = a.cols() == 1, br = b.rows() == 1, bc = b.cols() == 1;
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
          const double x = a(ar ? 0 : r, ac ? 0 : c);
          const double y = b(br ? 0 : r, bc ? 0 : c);
          if (n.op == Op::Mul) {
            ga(r, c) = g(r, c) * y;
            gb(r, c) = g(r, c) * x;
          } else {
            ga(r, c) = g(r, c) / y;
            gb(r, c) = -g(r, c) * x / (y * y);
          }
        }
      reduce_into(ga, gin(0), 1.0);
      reduce_into(gb, gin(1), 1.0);
      return;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor& ga = gin(0);
      Tensor& gb = gin(1);
      const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = g.data().data() + r * cols;
        for (std::size_t k = 0; k < inner; ++k) {
          const double* brow = b.data().data() + k * cols;
          double s = 0;
          for (std::size_t c = 0; c < cols; ++c) s += grow[c] * brow[c];
          ga(r, k) += s;
          const double av = a(r, k);
          if (av == 0.0) continue;
          double* gbrow = &gb(k, 0);
          for (std::size_t c = 0; c < cols; ++c) gbrow[c] += av * grow[c];
        }
      }
      return;
    }
    case Op::SumAll:
    case Op::MeanAll: {
      Tensor& ga = gin(0);
      double s = g[0];
      if (n.op == Op::MeanAll) s /= static_cast<double>(ga.numel());
      for (double& v : ga.data()) v += s;
      return;
    }
    case Op::SumCols: {
      Tensor& ga = gin(0);
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, 0);
      return;
    }
    case Op::ConcatCols: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Tensor& t = gin(k);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < t.cols(); ++c) t(t.rows() == 1 ? 0 : r, c) += g(r, off + c);
        off += t.cols();
      }
      return;
    }
    case Op::SliceCols: {
      Tensor& ga = gin(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = n.i0; c < n.i1; ++c) ga(r, c) += g(r, c - n.i0);
      return;
    }
    case Op::LayerNorm: {
      Tensor& ga = gin(0);
      const Tensor& a = in(0);
      const Tensor& y = n.value;
      const auto cols = static_cast<double>(a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double mu = 0;
        for (double v : a.row_span(r)) mu += v;
        mu /= cols;
        double var = 0;
        for (double v : a.row_span(r)) var += (v - mu) * (v - mu);
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + n.a);
        double mg = 0, mgy = 0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          mg += g(r, c);
          mgy += g(r, c) * y(r, c);
        }
        mg /= cols;
        mgy /= cols;
        for (std::size_t c = 0; c < a.cols(); ++c) ga(r, c) += inv * (g(r, c) - mg - y(r, c) * mgy);
      }
      return;
    }
    default:
      break;
  }

  const Tensor& a = in(0);
  Tensor& ga = gin(0);
  for (std::size_t j = 0; j < a.numel(); ++j) {
    const double x = a[j];
    const double y = n.value[j];
    double d = 0;
    switch (n.op) {
      case Op::Neg: d = -1.0; break;
      case Op::Exp: d = y; break;
      case Op::Log: d = 1.0 / x; break;
      case Op::Log1p: d = 1.0 / (1.0 + x); break;
      case Op::Sqrt: d = 0.5 / y; break;
      case Op::Square: d = 2.0 * x; break;
      case Op::Sigmoid: d = y * (1.0 - y); break;
      case Op::Softplus: d = stable_sigmoid(x); break;
      case Op::Gelu: d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); break;
      case Op::Relu: d = x > 0 ? 1.0 : 0.0; break;
      case Op::LGamma: d = digamma(x); break;
      case Op::Scale: d = n.a; break;
      case Op::Shift: d = 1.0; break;
      case Op::Clamp: d = (x > n.a && x < n.b) ? 1.0 : 0.0; break;
      default: break;
    }
    ga[j] += g[j] * d;
  }
}

std::map<std::string, Tensor> Graph::backward(const Tensor& seed) {
  if (!evaluated_) throw std::logic_error("backward called before eval");
  const Tensor& out = value(output_);
  if (seed.numel() != out.numel())
    throw std::invalid_argument("seed gradient shape " + shape_string(seed.shape()) + " does not match output " +
                                shape_string(out.shape()));
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].grad = Tensor(value(NodeId{static_cast<std::uint32_t>(i)}).shape(), 0.0);
  }
  auto& og = nodes_[output_.index].grad;
  for (std::size_t j = 0; j < og.numel(); ++j) og[j] = seed[j];
  for (std::size_t i = output_.index + 1; i-- > 0;) backward_node(i);

  std::map<std::string, Tensor> named;
  for (const auto& n : nodes_) {
    if (n.op == Op::Input || n.op == Op::Param) {
      auto [it, inserted] = named.emplace(n.name, n.grad);
      if (!inserted)
        for (std::size_t j = 0; j < n.grad.numel(); ++j) it->second[j] += n.grad[j];
    }
  }
  return named;
}

Var operator+(Var a, Var b) { return a.graph->binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return a.graph->binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return a.graph->binary(Op::Mul, a, b); }
Var operator/(Var a, Var b) { return a.graph->binary(Op::Div, a, b); }
Var operator-(Var a) { return a.graph->unary(Op::Neg, a); }
Var operator*(Var a, double s) { return a.graph->unary(Op::Scale, a, s); }
Var operator*(double s, Var a) { return a.graph->unary(Op::Scale, a, s); }
Var operator+(Var a, double s) { return a.graph->unary(Op::Shift, a, s); }
Var operator+(double s, Var a) { return a.graph->unary(Op::Shift, a, s); }
Var operator-(Var a, double s) { return a.graph->unary(Op::Shift, a, -s); }
Var operator-(double s, Var a) { return a.graph->unary(Op::Shift, a.graph->unary(Op::Neg, a), s); }
Var matmul(Var a, Var b) { return a.graph->binary(Op::MatMul, a, b); }
Var exp(Var x) { return x.graph->unary(Op::Exp, x); }
Var log(Var x) { return x.graph->unary(Op::Log, x); }
Var log1p(Var x) { return x.graph->unary(Op::Log1p, x); }
Var sqrt(Var x) { return x.graph->unary(Op::Sqrt, x); }
Var square(Var x) { return x.graph->unary(Op::Square, x); }
Var sigmoid(Var x) { return x.graph->unary(Op::Sigmoid, x); }
Var softplus(Var x) { return x.graph->unary(Op::Softplus, x); }
Var gelu(Var x) { return x.graph->unary(Op::Gelu, x); }
Var relu(Var x) { return x.graph->unary(Op::Relu, x); }
Var lgamma(Var x) { return x.graph->unary(Op::LGamma, x); }
Var clamp(Var x, double lo, double hi) { return x.graph->unary(Op::Clamp, x, lo, hi); }
Var sum(Var x) { return x.graph->unary(Op::SumAll, x); }
Var mean(Var x) { return x.graph->unary(Op::MeanAll, x); }
Var sum_cols(Var x) { return x.graph->unary(Op::SumCols, x); }
Var layer_norm(Var x, double eps) { return x.graph->unary(Op::LayerNorm, x, eps); }

Var activate(Activation act, Var x) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Gelu: return gelu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Softplus: return softplus(x);
    case Activation::Relu: return relu(x);
  }
  return x;
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "gelu") return Activation::Gelu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softplus") return Activation::Softplus;
  if (name == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation: " + name);
}

double grad_check(Graph& graph, const Bindings& inputs, const std::vector<ParameterPtr>& params, double step) {
  if (!(step > 0)) throw std::invalid_argument("grad_check step must be positive");
  auto r = graph.eval(inputs);
  if (r.value.numel() != 1) throw std::invalid_argument("grad_check requires a scalar output, got " +
                                                        shape_string(r.value.shape()));
  for (const auto& p : params) p->grad.fill(0.0);
  graph.backward();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    for (std::size_t j = 0; j < p->value.numel(); ++j) {
      const double orig = p->value[j];
      p->value[j] = orig + step;
      const double up = graph.eval(inputs).value.item();
      p->value[j] = orig - step;
      const double down = graph.eval(inputs).value.item();
      p->value[j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, std::abs(analytic[k][j] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  graph.eval(inputs);
  return worst;
}

}  // namespace lsnpc
