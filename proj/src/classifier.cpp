#include "lsnpc/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lsnpc/distributions.hpp"
#include "lsnpc/metrics.hpp"

namespace lsnpc {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
}

Tensor to_tensor(const FeatureMatrix& x) {
  Tensor t(Shape{x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.data().size(); ++i) t[i] = x.data()[i];
  return t;
}

Tensor to_tensor(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  Tensor t(Shape{rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = x.row(rows[i]);
    for (std::size_t c = 0; c < x.cols(); ++c) t(i, c) = src[c];
  }
  return t;
}

Tensor to_tensor(const LabelMatrix& y) {
  Tensor t(Shape{y.rows(), y.cols()});
  for (std::size_t i = 0; i < y.data().size(); ++i) t[i] = y.data()[i];
  return t;
}

BaseClassifier::BaseClassifier(std::size_t d, std::size_t k, BaseArchitecture arch, std::uint64_t seed)
    : d_(d), k_(k) {
  if (d == 0 || k == 0) throw std::invalid_argument("classifier dimensions must be positive");
  Rng rng = make_rng(seed, streams::kBaseInit);
  MlpSpec spec;
  spec.sizes.push_back(d);
  spec.sizes.insert(spec.sizes.end(), arch.hidden.begin(), arch.hidden.end());
  spec.sizes.push_back(k);
  spec.hidden = arch.activation;
  net_ = Mlp(store_, "base", spec, rng);
  net_.zero_output_layer();
}

ProbMatrix BaseClassifier::predict_probs(const FeatureMatrix& x) const {
  if (x.cols() != d_) throw std::invalid_argument("predict_probs: expected " + std::to_string(d_) +
                                                  " features, got " + std::to_string(x.cols()));
  Graph g;
  auto in = g.input("x");
  g.set_output(clamp(sigmoid(net_.forward(g, in)), kProbEpsilon, 1.0 - kProbEpsilon));
  auto r = g.eval({{"x", to_tensor(x)}});
  return ProbMatrix(x.rows(), k_, std::vector<double>(r.value.data().begin(), r.value.data().end()));
}

namespace {

// Mean BCE from logits: softplus(l) - y * l.
Var bce_from_logits(Var logits, Var y) { return mean(softplus(logits) - y * logits); }

}  // namespace

double bce_loss(const BaseClassifier& h, const FeatureMatrix& x, const LabelMatrix& y) {
  Graph g;
  auto xin = g.input("x");
  auto yin = g.input("y");
  g.set_output(bce_from_logits(h.network().forward(g, xin), yin));
  return g.eval({{"x", to_tensor(x)}, {"y", to_tensor(y)}}).value.item();
}

BaseClassifier train_base(const FeatureMatrix& x, const LabelMatrix& y, const TrainConfig& cfg,
                          const BaseArchitecture& arch, const FeatureMatrix* x_val, const LabelMatrix* y_val) {
  cfg.validate();
  if (x.rows() != y.rows()) throw std::invalid_argument("train_base: X and Y row counts differ");
  if (x.rows() == 0) throw std::invalid_argument("train_base: empty training set");
  BaseClassifier h(x.cols(), y.cols(), arch, cfg.seed);

  Graph g;
  auto xin = g.input("x");
  auto yin = g.input("y");
  g.set_output(bce_from_logits(h.network().forward(g, xin), yin));

  Optimizer opt(h.parameters(), OptimizerConfig{cfg.optimizer, cfg.weight_decay});
  const bool select = x_val && y_val && x_val->rows() > 0;
  auto best = h.state();
  if (select) {
    h.best_validation_micro_f1 = micro_f1(*y_val, binarize(h.predict_probs(*x_val), 0.5));
  }

  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n_batches = (x.rows() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng rng = make_rng(cfg.seed, streams::kBaseTrain, epoch);
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(x.rows(), lo + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      Tensor yt(Shape{idx.size(), y.cols()});
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < y.cols(); ++c) yt(i, c) = y(idx[i], c);
      auto r = g.eval({{"x", to_tensor(x, idx)}, {"y", yt}});
      if (!r.finite) throw std::runtime_error("base classifier diverged at epoch " + std::to_string(epoch));
      h.parameters().zero_grad();
      g.backward();
      const double progress = static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(n_batches);
      opt.step(cosine_annealed_lr(cfg.learning_rate, progress, cfg.cosine_cycle));
    }
    const double loss = bce_loss(h, x, y);
    if (!std::isfinite(loss)) throw std::runtime_error("base classifier diverged at epoch " + std::to_string(epoch));
    h.epoch_losses.push_back(loss);
    h.epochs_trained = epoch + 1;
    if (select) {
      const double f1 = micro_f1(*y_val, binarize(h.predict_probs(*x_val), 0.5));
      if (f1 > h.best_validation_micro_f1) {
        h.best_validation_micro_f1 = f1;
        h.best_epoch = epoch + 1;
        best = h.state();
      }
    }
  }
  if (select) h.load_state(best);
  return h;
}

LabelMatrix sample_predictions(std::span<const double> probs, std::size_t samples, Rng& rng) {
  if (samples == 0) throw std::invalid_argument("sample_predictions: need at least one sample");
  LabelMatrix out(samples, probs.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t i = 0; i < probs.size(); ++i) out(s, i) = unif(rng) < probs[i] ? 1 : 0;
  return out;
}

LabelMatrix binarize(const ProbMatrix& probs, double tau) {
  LabelMatrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.data().size(); ++i) out.data()[i] = probs.data()[i] > tau ? 1 : 0;
  return out;
}

}  // namespace lsnpc
