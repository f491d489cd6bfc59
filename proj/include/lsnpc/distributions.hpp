#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace lsnpc {

/// Clamp applied to every Bernoulli probability in the model.
inline constexpr double kProbEpsilon = 1e-6;

struct DiagNormalParams {
  std::vector<double> mean;
  std::vector<double> scale;
  std::size_t dim() const { return mean.size(); }
};

struct DiagStudentParams {
  std::vector<double> mean;
  std::vector<double> scale;
  double dof = 2.01;
  std::size_t dim() const { return mean.size(); }
};

/// How the Student family couples its dimensions.
///   Shared: one chi-square mixing variable per vector (multivariate Student
///           with diagonal scale matrix).
///   Independent: one mixing variable per dimension (product of univariate
///           Students).
enum class StudentCoupling : std::uint8_t { Shared, Independent };

/// Independent Bernoulli probabilities, clamped into (eps, 1 - eps).
class BernoulliVec {
 public:
  BernoulliVec() = default;
  explicit BernoulliVec(std::vector<double> probs);
  std::span<const double> probs() const noexcept { return p_; }
  std::size_t size() const noexcept { return p_.size(); }

 private:
  std::vector<double> p_;
};

std::vector<double> rsample_diag_normal(const DiagNormalParams& params, std::span<const double> noise);

/// mu + sigma * noise * sqrt(dof / chi2). `chi2` holds one draw (shared) or one per dimension.
std::vector<double> rsample_diag_student(const DiagStudentParams& params, std::span<const double> normal_noise,
                                         std::span<const double> chi2);

double logpdf_diag_normal(std::span<const double> x, const DiagNormalParams& params);
double logpdf_diag_student(std::span<const double> x, const DiagStudentParams& params,
                           StudentCoupling coupling = StudentCoupling::Shared);
double logpmf_bernoulli(std::span<const std::uint8_t> y, const BernoulliVec& probs);

double kl_diag_normal(const DiagNormalParams& p, const DiagNormalParams& q);
double kl_mv_bernoulli(const BernoulliVec& p, const BernoulliVec& q);

/// Upper bound on KL[p || q] for two diagonal-scale multivariate Students
/// sharing the same degrees of freedom (> 2).
double kl_student_same_nu_upper_bound(const DiagStudentParams& p, const DiagStudentParams& q);

/// Differential entropy of a shared-coupling diagonal Student.
double entropy_diag_student(const DiagStudentParams& params);
double entropy_diag_normal(const DiagNormalParams& params);

}  // namespace lsnpc
