#pragma once

#include <string>
#include <vector>

#include "lsnpc/graph.hpp"
#include "lsnpc/rng.hpp"

namespace lsnpc {

struct MlpSpec {
  std::vector<std::size_t> sizes;  // input, hidden..., output
  Activation hidden = Activation::Gelu;
  bool layer_norm = false;         // standardize between hidden layers
};

/// Stack of dense layers whose parameters live in a ParameterStore.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& prefix, MlpSpec spec, Rng& rng);

  /// Appends the forward pass to `g`; the output layer has no activation.
  Var forward(Graph& g, Var x) const;

  std::size_t in_dim() const { return spec_.sizes.front(); }
  std::size_t out_dim() const { return spec_.sizes.back(); }
  std::size_t depth() const { return weights_.size(); }
  const ParameterPtr& weight(std::size_t layer) const { return weights_.at(layer); }
  const ParameterPtr& bias(std::size_t layer) const { return biases_.at(layer); }
  const ParameterPtr& last_weight() const { return weights_.back(); }
  const ParameterPtr& last_bias() const { return biases_.back(); }
  const MlpSpec& spec() const { return spec_; }
  std::vector<ParameterPtr> parameters() const;

  /// Zero the output layer (weights and bias).
  void zero_output_layer();

 private:
  MlpSpec spec_;
  std::vector<ParameterPtr> weights_;
  std::vector<ParameterPtr> biases_;
  std::vector<ParameterPtr> ln_gain_;
  std::vector<ParameterPtr> ln_bias_;
};

enum class OptimizerKind { Sgd, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Applies accumulated gradients in parameter-name order.
class Optimizer {
 public:
  Optimizer(const ParameterStore& store, OptimizerConfig cfg);
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  struct Slot {
    ParameterPtr p;
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

/// Cosine annealing over a fixed cycle measured in epochs (fractional progress allowed).
double cosine_annealed_lr(double base_lr, double epoch_progress, double cycle_epochs);

OptimizerKind parse_optimizer(const std::string& name);

}  // namespace lsnpc
