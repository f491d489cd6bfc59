#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsnpc/matrix.hpp"
#include "lsnpc/model.hpp"

namespace lsnpc {

/// Uniform 1-D grid used for every quadrature dimension.
struct QuadratureGrid {
  double lo = -8.0;
  double hi = 8.0;
  double step = 0.02;

  void validate() const;
  std::size_t size() const;
  std::vector<double> axis() const;
};

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1): nodes t_i and weights summing to 1.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermite gauss_hermite(std::size_t order);

/// Quadrature tables of the tiny (m = 1) model. zhat lives on the uniform grid;
/// for each zhat_j the inner z integral uses Gauss-Hermite nodes placed on q(z | zhat_j),
/// so near-degenerate conditionals stay resolved.
struct Theorem1Tables {
  std::vector<double> axis;
  double step = 0;
  std::size_t order = 0;                 // Gauss-Hermite nodes per zhat
  std::vector<double> weights;           // [i]
  std::vector<double> log_q_zhat;        // [j]          log q(zhat_j | x, yhat)
  std::vector<double> log_q_z;           // [j * G + i]  log q(z_ji | zhat_j)
  std::vector<double> log_posterior;     // [j * G + i]  log p(z_ji, zhat_j | x, yhat)
  std::vector<double> log_posterior_z;   // [j * G + i]  log p(z_ji | x, yhat)
  double log_evidence = 0;               // log p(yhat | x)
  double proposal_entropy = 0;           // differential entropy of q(zhat | x, yhat)
  std::size_t n() const { return axis.size(); }
};

struct Theorem1Result {
  double lhs = 0;  // E_q(zhat)[ KL(q(z|zhat) || p(z|x,yhat)) ]
  double rhs = 0;  // KL(q(z, zhat | x, yhat) || p(z, zhat | x, yhat))
  double proposal_entropy = 0;
  bool entropy_nonnegative() const { return proposal_entropy >= 0; }
};

/// Throws when q(zhat | x, yhat) loses more than 1e-3 of its mass outside the grid.
Theorem1Tables theorem1_tables(const LsnpcModel& model, std::span<const double> x, std::span<const std::uint8_t> yhat,
                               const QuadratureGrid& grid, std::size_t order = 40);
Theorem1Result evaluate_theorem1(const Theorem1Tables& tables);
Theorem1Result verify_theorem1(const LsnpcModel& model, std::span<const double> x,
                               std::span<const std::uint8_t> yhat, const QuadratureGrid& grid, std::size_t order = 40);

using LabelVector = std::vector<std::uint8_t>;

struct LabelPair {
  LabelVector y0;
  LabelVector y1;
};

std::size_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// y0 drawn from rows of `labels`, y1 = y0 with a uniform number in [1, max_delta] of distinct bits flipped.
std::vector<LabelPair> random_label_pairs(const LabelMatrix& labels, std::size_t count, std::size_t max_delta, Rng& rng);
/// `per_delta` pairs at each exact Hamming distance in `deltas`.
std::vector<LabelPair> controlled_label_pairs(const LabelMatrix& labels, std::size_t per_delta,
                                              std::span<const std::size_t> deltas, Rng& rng);

struct BoundConstants {
  double M = 0;       // max variance ratio per unit of Delta
  double L = 0;       // max |mean difference|_inf per unit of Delta
  double lambda = 0;  // min observed variance
  std::size_t evaluations = 0;
  std::vector<std::string> warnings;

  /// Enlarges the bound: M and L times `factor`, lambda divided by it.
  BoundConstants inflated(double factor) const;
};

/// Empirical constants over every (sample row, pair) combination.
BoundConstants estimate_constants(const LsnpcModel& model, const FeatureMatrix& x_sample,
                                  const std::vector<LabelPair>& pairs);

struct StudentBound {
  double alpha = 0;
  double c1 = 0;
  double c2 = 0;
  double at(double delta) const { return c1 + c2 * delta; }
};

StudentBound theorem2_constants(std::size_t m, double nu, const BoundConstants& constants);
double theorem2_bound(std::size_t m, double nu, const BoundConstants& constants, double delta);

struct McEstimate {
  double value = 0;
  double std_error = 0;
};

/// KL[p || q] by sampling from p with exact log-densities.
McEstimate mc_kl_student(const DiagStudentParams& p, const DiagStudentParams& q, std::size_t samples, Rng& rng);

struct BoundRow {
  std::size_t delta = 0;
  double kl = 0;
  double std_error = 0;
  double bound = 0;
  bool holds() const { return kl <= bound; }
};

/// MC KL[q(zhat|x,y1) || q(zhat|x,y0)] against C1 + C2 Delta; pair i uses sample row i mod n.
std::vector<BoundRow> theorem2_check(const LsnpcModel& model, const FeatureMatrix& x_sample,
                                     const std::vector<LabelPair>& pairs, const BoundConstants& constants,
                                     std::size_t samples, std::uint64_t seed);

/// Closed-form Normal KLs against (3Mm/2) Delta - m/2 + (m L^2 / lambda) Delta^2.
std::vector<BoundRow> gaussian_bound_check(const LsnpcModel& model_gauss, const FeatureMatrix& x_sample,
                                           const std::vector<LabelPair>& pairs, const BoundConstants& constants);
double gaussian_bound(std::size_t m, const BoundConstants& constants, double delta);

/// Least-squares slope of log(mean KL at Delta) against log(Delta).
double fit_delta_exponent(const std::vector<BoundRow>& rows);

struct AmortizationResult {
  double kl = 0;
  double per_disagreeing_label = 0;
  double per_dimension = 0;
};

AmortizationResult amortization_demo(std::size_t k, double matched_prob, double pos_prob_a, double pos_prob_b,
                                     std::size_t n_pos);

/// One line of the verification report.
struct CheckRow {
  std::string name;
  std::size_t instances = 0;
  std::size_t passed = 0;
  double worst_margin = 0;
  std::string note;
};

std::string verification_text(const std::vector<CheckRow>& rows);
std::string verification_csv(const std::vector<CheckRow>& rows);

}  // namespace lsnpc
