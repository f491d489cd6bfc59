#include "lsnpc/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lsnpc {

Mlp::Mlp(ParameterStore& store, const std::string& prefix, MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  if (spec_.sizes.size() < 2) throw std::invalid_argument(prefix + ": MLP needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < spec_.sizes.size(); ++l) {
    const std::size_t in = spec_.sizes[l], out = spec_.sizes[l + 1];
    if (in == 0 || out == 0) throw std::invalid_argument(prefix + ": zero layer width");
    Tensor w(Shape{in, out});
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(in + out)));
    for (auto& v : w.data()) v = init(rng);
    weights_.push_back(store.add(prefix + ".l" + std::to_string(l) + ".weight", std::move(w)));
    biases_.push_back(store.add(prefix + ".l" + std::to_string(l) + ".bias", Tensor(Shape{1, out})));
    const bool hidden = l + 2 < spec_.sizes.size();
    if (hidden && spec_.layer_norm) {
      ln_gain_.push_back(store.add(prefix + ".ln" + std::to_string(l) + ".gain", Tensor(Shape{1, out}, 1.0)));
      ln_bias_.push_back(store.add(prefix + ".ln" + std::to_string(l) + ".bias", Tensor(Shape{1, out})));
    }
  }
}

Var Mlp::forward(Graph& g, Var x) const {
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = matmul(h, g.param(weights_[l])) + g.param(biases_[l]);
    if (l + 1 < weights_.size()) {
      if (spec_.layer_norm) h = layer_norm(h) * g.param(ln_gain_[l]) + g.param(ln_bias_[l]);
      h = activate(spec_.hidden, h);
    }
  }
  return h;
}

std::vector<ParameterPtr> Mlp::parameters() const {
  std::vector<ParameterPtr> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  out.insert(out.end(), ln_gain_.begin(), ln_gain_.end());
  out.insert(out.end(), ln_bias_.begin(), ln_bias_.end());
  return out;
}

void Mlp::zero_output_layer() {
  weights_.back()->value.fill(0.0);
  biases_.back()->value.fill(0.0);
}

Optimizer::Optimizer(const ParameterStore& store, OptimizerConfig cfg) : cfg_(cfg) {
  for (const auto& [_, p] : store) {
    Slot s{p, {}, {}};
    if (cfg_.kind == OptimizerKind::AdamW) {
      s.m.assign(p->value.numel(), 0.0);
      s.v.assign(p->value.numel(), 0.0);
    }
    slots_.push_back(std::move(s));
  }
}

void Optimizer::step(double lr) {
  ++t_;
  if (cfg_.kind == OptimizerKind::Sgd) {
    for (auto& s : slots_) {
      auto w = s.p->value.data();
      auto g = s.p->grad.data();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
    }
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto w = s.p->value.data();
    auto g = s.p->grad.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      s.m[j] = cfg_.beta1 * s.m[j] + (1 - cfg_.beta1) * g[j];
      s.v[j] = cfg_.beta2 * s.v[j] + (1 - cfg_.beta2) * g[j] * g[j];
      const double mhat = s.m[j] / bc1;
      const double vhat = s.v[j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }
}

double cosine_annealed_lr(double base_lr, double epoch_progress, double cycle_epochs) {
  if (cycle_epochs <= 0) return base_lr;
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * epoch_progress / cycle_epochs));
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw std::invalid_argument("unknown optimizer: " + name);
}

}  // namespace lsnpc
