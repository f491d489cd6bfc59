#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsnpc/classifier.hpp"
#include "lsnpc/distributions.hpp"
#include "lsnpc/matrix.hpp"
#include "lsnpc/nn.hpp"

namespace lsnpc {

enum class ProposalFamily : std::uint8_t { Student, Normal };
enum class NuMode : std::uint8_t { Fixed, Learned };

std::string to_string(ProposalFamily f);
std::string to_string(NuMode m);
std::string to_string(StudentCoupling c);
ProposalFamily parse_proposal(const std::string& s);
NuMode parse_nu_mode(const std::string& s);
StudentCoupling parse_coupling(const std::string& s);

struct ModelConfig {
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t m = 16;
  double nu = 2.01;   // proposal q(zhat | x, yhat)
  double nu0 = 2.01;  // generative p(zhat | z)
  double beta = 0.01;
  double eta = 0.5;
  double scale_floor = 1e-3;
  ProposalFamily proposal = ProposalFamily::Student;
  NuMode nu_mode = NuMode::Fixed;
  StudentCoupling coupling = StudentCoupling::Shared;
  std::size_t hidden = 64;           // encoder / decoder hidden width
  std::size_t label_hidden = 64;     // label encoder hidden width
  std::size_t label_embedding = 128; // label encoder output width
  std::size_t label_layers = 4;
  std::size_t shift_layers = 2;      // g_psi depth; 1 means a single linear map
  std::size_t samples_y = 4;         // yhat draws per row during training
  std::size_t samples_z = 1;         // latent draws per yhat during training

  void validate() const;
  /// "key = value" lines, sorted by key.
  std::string manifest() const;
  static ModelConfig parse_manifest(const std::string& text);
};

struct LatentVars {
  Var mean;
  Var scale;
};

struct LatentParams {
  Tensor mean;   // rows x m
  Tensor scale;  // rows x m
};

/// Externally supplied noise for one loss evaluation; every tensor has one
/// row per (x, yhat) row of the batch.
struct LossDraws {
  Tensor eps_zhat;      // rows x m standard normal
  Tensor student_w;     // rows x 1 (shared) or rows x m (independent): sqrt(nu / chi2)
  Tensor eps_z;         // rows x m standard normal
  Tensor eps_zy;        // rows x m, supervised theta branch only
  Tensor branch;        // rows x 1 in {0,1}, 1 selects the theta branch
};

/// Per-row means of the individual ELBO terms (unweighted) and the loss.
struct LossTerms {
  double loss = 0;
  double log_p_yhat = 0;       // log p(yhat | x, zhat)
  double log_p_y = 0;          // log p(y | x, z), supervised only
  double log_p_zhat_given_z = 0;
  double log_p_z = 0;
  double log_q_zhat = 0;
  double log_q_z = 0;
  std::size_t rows = 0;
  std::size_t theta_branch = 0;  // rows whose z came from the theta branch
  std::string breakdown() const;
};

/// Node handles into a loss graph built by LsnpcModel.
struct LossGraph {
  Var loss;
  Var log_p_yhat, log_p_y, log_p_zhat_given_z, log_p_z, log_q_zhat, log_q_z;
  bool supervised = false;
};

class LsnpcModel {
 public:
  LsnpcModel(const ModelConfig& cfg, std::uint64_t seed);
  LsnpcModel(const LsnpcModel&) = delete;
  LsnpcModel& operator=(const LsnpcModel&) = delete;
  LsnpcModel(LsnpcModel&&) = default;
  LsnpcModel& operator=(LsnpcModel&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }

  const Mlp& label_encoder() const noexcept { return label_net_; }
  const Mlp& theta() const noexcept { return theta_net_; }
  const Mlp& kappa() const noexcept { return kappa_net_; }
  const Mlp& psi() const noexcept { return psi_net_; }
  const Mlp& phi() const noexcept { return phi_net_; }
  const Mlp& nu_net() const;

  // Graph builders.
  LatentVars encode_xy(Graph& g, Var x, Var y) const;
  LatentVars encode_zhat_to_z(Graph& g, Var zhat) const;
  Var decode_shift(Graph& g, Var z) const;
  Var decode_labels(Graph& g, Var x, Var z) const;  // clamped probabilities
  Var learned_nu(Graph& g, Var x, Var yhat) const;

  /// Inputs: x, yhat, eps_zhat, student_w, eps_z, and for the supervised
  /// graph also y, eps_zy, branch.
  LossGraph build_loss(Graph& g, bool supervised) const;

  // Tensor conveniences; rows of x pair with rows of y.
  LatentParams encode_xy(const Tensor& x, const Tensor& y) const;
  LatentParams encode_zhat_to_z(const Tensor& zhat) const;
  Tensor decode_shift(const Tensor& z) const;
  Tensor decode_labels(const Tensor& x, const Tensor& z) const;
  Tensor learned_nu(const Tensor& x, const Tensor& yhat) const;

  /// Draws for `rows` rows; in learned mode nu is evaluated at (x, yhat)
  /// first so the mixing variable uses the row's own dof.
  LossDraws draw(const Tensor& x, const Tensor& yhat, bool supervised, Rng& rng) const;

  LossTerms unsupervised_loss(const Tensor& x, const Tensor& yhat, const LossDraws& draws) const;
  LossTerms unsupervised_loss(const Tensor& x, const Tensor& yhat, Rng& rng) const;
  LossTerms supervised_loss(const Tensor& x, const Tensor& y, const Tensor& yhat, const LossDraws& draws) const;
  LossTerms supervised_loss(const Tensor& x, const Tensor& y, const Tensor& yhat, Rng& rng) const;

  std::map<std::string, Tensor> state() const { return store_.snapshot(); }
  void load_state(const std::map<std::string, Tensor>& state) { store_.restore(state); }

  // Training metadata.
  std::size_t epochs_trained = 0;
  std::size_t best_epoch = 0;
  double best_validation_micro_f1 = -1;
  std::vector<double> epoch_losses;  // mean unsupervised loss per epoch

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  Mlp label_net_, theta_net_, kappa_net_, psi_net_, phi_net_, nu_net_;
};

/// Bindings for a loss graph from tensors and draws.
Bindings loss_bindings(const Tensor& x, const Tensor* y, const Tensor& yhat, const LossDraws& draws);
/// Reads the term values out of an evaluated loss graph.
LossTerms read_terms(const Graph& g, const LossGraph& lg, const Bindings& b);

struct LsnpcTrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t clean_epochs = 5;  // Alg. 1 clean sweeps run in the final clean_epochs epochs
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double weight_decay = 0.01;
  double cosine_cycle = 10.0;
  std::uint64_t seed = 1;
  bool select_by_validation = true;

  void validate() const;
};

/// Rows with features and the base classifier's label probabilities.
struct NoisySet {
  FeatureMatrix x;
  ProbMatrix base_probs;
};

struct CleanSet {
  FeatureMatrix x;
  LabelMatrix y;
  ProbMatrix base_probs;
  bool empty() const { return x.rows() == 0; }
};

struct ValidationSet {
  FeatureMatrix x;
  LabelMatrix y;
  ProbMatrix base_probs;
};

struct CorrectionConfig;

/// Alg. 1: each epoch sweeps the noisy batches with the unsupervised loss,
/// then the clean batches with the supervised loss.
void train_semi_supervised(LsnpcModel& model, const NoisySet& noisy, const CleanSet& clean,
                           const LsnpcTrainConfig& cfg, const ValidationSet* validation = nullptr,
                           const CorrectionConfig* correction = nullptr);

void save_model(const LsnpcModel& model, const std::string& path);
LsnpcModel load_model(const std::string& path);

}  // namespace lsnpc
