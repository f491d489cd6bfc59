#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsnpc/tensor.hpp"

namespace lsnpc {

enum class Op : std::uint8_t {
  Input,
  Param,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  MatMul,
  Exp,
  Log,
  Log1p,
  Sqrt,
  Square,
  Sigmoid,
  Softplus,
  Gelu,
  Relu,
  LGamma,
  Scale,      // x * a
  Shift,      // x + a
  Clamp,      // min(max(x, a), b)
  SumAll,     // -> 1x1
  MeanAll,    // -> 1x1
  SumCols,    // n x c -> n x 1
  ConcatCols,
  SliceCols,  // columns [i0, i1)
  LayerNorm,  // per-row standardization, epsilon a
};

std::string_view op_name(Op op);

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

class Graph;

/// Handle used while building a graph; arithmetic on handles appends nodes.
struct Var {
  Graph* graph = nullptr;
  NodeId id;
};

using Bindings = std::map<std::string, Tensor>;

struct EvalResult {
  Tensor value;
  bool finite = true;
  std::optional<std::string> nonfinite_node;
};

/// A define-then-run reverse-mode differentiation graph over matrices.
///
/// Nodes are appended in topological order, so every input id precedes its
/// consumer. Elementwise binary ops broadcast a size-1 extent of either
/// operand. Parameters are shared by pointer and gradients accumulate into
/// Parameter::grad on backward().
class Graph {
 public:
  Var input(const std::string& name);
  Var param(const ParameterPtr& p);
  Var constant(Tensor value, std::string label = {});
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  Var unary(Op op, Var x, double a = 0.0, double b = 0.0);
  Var binary(Op op, Var lhs, Var rhs);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var x, std::size_t begin, std::size_t end);

  /// Attach a human-readable label used in error messages and lookups.
  void label(Var v, std::string name);
  std::optional<NodeId> find(const std::string& label) const;

  void set_output(Var v) { output_ = v.id; }
  NodeId output() const { return output_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  EvalResult eval(const Bindings& inputs);
  /// Evaluate and return the value of one node; bindings must cover its inputs.
  const Tensor& value(NodeId id) const;
  const Tensor& value(Var v) const { return value(v.id); }

  /// Reverse sweep from the output. Returns gradients of named inputs and
  /// parameters; parameter gradients are also accumulated into the store.
  std::map<std::string, Tensor> backward(const Tensor& seed);
  std::map<std::string, Tensor> backward() { return backward(Tensor::scalar(1.0)); }
  const Tensor& grad(NodeId id) const;

  bool evaluated() const noexcept { return evaluated_; }

 private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    double a = 0.0;
    double b = 0.0;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    std::string name;
    ParameterPtr param;
    Tensor value;
    Tensor grad;
  };

  Var push(Node n);
  std::string describe(std::size_t index) const;
  void forward_node(std::size_t index, const Bindings& inputs);
  void backward_node(std::size_t index);

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> labels_;
  NodeId output_;
  bool evaluated_ = false;
};

// Building helpers.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, double s);
Var operator*(double s, Var a);
Var operator+(Var a, double s);
Var operator+(double s, Var a);
Var operator-(Var a, double s);
Var operator-(double s, Var a);
Var matmul(Var a, Var b);
Var exp(Var x);
Var log(Var x);
Var log1p(Var x);
Var sqrt(Var x);
Var square(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var gelu(Var x);
Var relu(Var x);
Var lgamma(Var x);
Var clamp(Var x, double lo, double hi);
Var sum(Var x);
Var mean(Var x);
Var sum_cols(Var x);
Var layer_norm(Var x, double eps = 1e-5);

enum class Activation : std::uint8_t { Identity, Gelu, Sigmoid, Softplus, Relu };
Var activate(Activation act, Var x);
Activation parse_activation(const std::string& name);

/// Maximum over all parameter entries of |analytic - numeric| / max(1, |numeric|)
/// using central differences. The graph output must be a single value.
double grad_check(Graph& graph, const Bindings& inputs, const std::vector<ParameterPtr>& params, double step);

}  // namespace lsnpc
