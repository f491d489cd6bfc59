#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lsnpc/matrix.hpp"
#include "lsnpc/nn.hpp"

namespace lsnpc {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double weight_decay = 0.01;
  double cosine_cycle = 10.0;  // epochs; 0 keeps the rate constant
  bool shuffle = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct BaseArchitecture {
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::Gelu;
};

/// Sigmoid-output MLP h(x) giving independent per-label probabilities.
class BaseClassifier {
 public:
  BaseClassifier(std::size_t d, std::size_t k, BaseArchitecture arch, std::uint64_t seed);

  std::size_t input_dim() const noexcept { return d_; }
  std::size_t label_count() const noexcept { return k_; }

  /// Probabilities clamped to (eps, 1 - eps).
  ProbMatrix predict_probs(const FeatureMatrix& x) const;

  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }
  const Mlp& network() const noexcept { return net_; }

  std::map<std::string, Tensor> state() const { return store_.snapshot(); }
  void load_state(const std::map<std::string, Tensor>& state) { store_.restore(state); }

  // Training metadata.
  std::size_t epochs_trained = 0;
  std::size_t best_epoch = 0;
  double best_validation_micro_f1 = -1;
  std::vector<double> epoch_losses;  // full-train-set loss after each epoch

 private:
  std::size_t d_, k_;
  ParameterStore store_;
  Mlp net_;
};

/// Mean binary cross-entropy training; keeps the epoch with the best
/// validation micro-F1 when a validation set is supplied.
BaseClassifier train_base(const FeatureMatrix& x, const LabelMatrix& y, const TrainConfig& cfg,
                          const BaseArchitecture& arch = {}, const FeatureMatrix* x_val = nullptr,
                          const LabelMatrix* y_val = nullptr);

/// Mean binary cross-entropy of the classifier on (x, y).
double bce_loss(const BaseClassifier& h, const FeatureMatrix& x, const LabelMatrix& y);

/// S independent Bernoulli(p) label vectors, one per row.
LabelMatrix sample_predictions(std::span<const double> probs, std::size_t samples, Rng& rng);

/// Thresholded probabilities: 1 where p > tau.
LabelMatrix binarize(const ProbMatrix& probs, double tau);

Tensor to_tensor(const FeatureMatrix& x);
Tensor to_tensor(const FeatureMatrix& x, std::span<const std::size_t> rows);
Tensor to_tensor(const LabelMatrix& y);

}  // namespace lsnpc
