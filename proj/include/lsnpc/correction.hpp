#pragma once

#include <cstdint>
#include <string>

#include "lsnpc/classifier.hpp"
#include "lsnpc/matrix.hpp"
#include "lsnpc/model.hpp"

namespace lsnpc {

struct CorrectionConfig {
  std::size_t samples_y = 8;
  std::size_t samples_zhat = 4;
  std::size_t samples_z = 1;
  double threshold = 0.5;
  std::uint64_t seed = 1;
  std::size_t chunk_rows = 128;  // rows processed per forward pass; does not affect results

  void validate() const;
  std::size_t chains() const { return samples_y * samples_zhat * samples_z; }
};

struct CorrectionResult {
  ProbMatrix probs;      // y*
  LabelMatrix labels;    // probs > threshold
  ProbMatrix std_error;  // Monte-Carlo standard error per cell
};

/// y*(x) = E[g_phi(x, z)] over yhat ~ p_h(.|x), zhat ~ q(zhat|x,yhat), z ~ q(z|zhat).
/// Each row draws from its own stream so results do not depend on chunking.
CorrectionResult correct(const LsnpcModel& model, const ProbMatrix& base_probs, const FeatureMatrix& x,
                         const CorrectionConfig& cfg);
CorrectionResult correct(const LsnpcModel& model, const BaseClassifier& h, const FeatureMatrix& x,
                         const CorrectionConfig& cfg);

/// Per-label majority vote over the K Euclidean-nearest training rows; a vote
/// of exactly K/2 counts as positive.
LabelMatrix knn_correct(const FeatureMatrix& train_x, const LabelMatrix& noisy_train_y, const FeatureMatrix& x,
                        std::size_t K = 5);

/// n rows of k probabilities followed by n rows of k 0/1 labels.
std::string correction_csv(const CorrectionResult& result);

}  // namespace lsnpc
