#include "lsnpc/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lsnpc/special.hpp"

namespace lsnpc {

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch " + std::to_string(a) + " vs " +
                                          std::to_string(b));
}

void require_params(const std::vector<double>& mean, const std::vector<double>& scale, const char* what) {
  require_same(mean.size(), scale.size(), what);
  for (double s : scale)
    if (!(s > 0)) throw std::invalid_argument(std::string(what) + ": scale must be positive");
}

}  // namespace

BernoulliVec::BernoulliVec(std::vector<double> probs) : p_(std::move(probs)) {
  for (double& p : p_) {
    if (std::isnan(p)) throw std::invalid_argument("BernoulliVec: NaN probability");
    p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  }
}

std::vector<double> rsample_diag_normal(const DiagNormalParams& params, std::span<const double> noise) {
  require_params(params.mean, params.scale, "rsample_diag_normal");
  require_same(noise.size(), params.dim(), "rsample_diag_normal");
  std::vector<double> out(params.dim());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = params.mean[j] + params.scale[j] * noise[j];
  return out;
}

std::vector<double> rsample_diag_student(const DiagStudentParams& params, std::span<const double> normal_noise,
                                         std::span<const double> chi2) {
  require_params(params.mean, params.scale, "rsample_diag_student");
  require_same(normal_noise.size(), params.dim(), "rsample_diag_student");
  if (chi2.size() != 1 && chi2.size() != params.dim())
    throw std::invalid_argument("rsample_diag_student: chi2 must have one or m entries");
  for (double c : chi2)
    if (!(c > 0)) throw std::invalid_argument("rsample_diag_student: chi-square draw must be positive");
  std::vector<double> out(params.dim());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double c = chi2.size() == 1 ? chi2[0] : chi2[j];
    out[j] = params.mean[j] + params.scale[j] * normal_noise[j] * std::sqrt(params.dof / c);
  }
  return out;
}

double logpdf_diag_normal(std::span<const double> x, const DiagNormalParams& params) {
  require_params(params.mean, params.scale, "logpdf_diag_normal");
  require_same(x.size(), params.dim(), "logpdf_diag_normal");
  double lp = -0.5 * kLog2Pi * static_cast<double>(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double u = (x[j] - params.mean[j]) / params.scale[j];
    lp -= std::log(params.scale[j]) + 0.5 * u * u;
  }
  return lp;
}

double logpdf_diag_student(std::span<const double> x, const DiagStudentParams& params, StudentCoupling coupling) {
  require_params(params.mean, params.scale, "logpdf_diag_student");
  require_same(x.size(), params.dim(), "logpdf_diag_student");
  const double nu = params.dof;
  if (!(nu > 1)) throw std::invalid_argument("logpdf_diag_student: degrees of freedom must exceed 1, got " +
                                             std::to_string(nu));
  const auto m = static_cast<double>(x.size());
  if (coupling == StudentCoupling::Shared) {
    double quad = 0, logdet = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double u = (x[j] - params.mean[j]) / params.scale[j];
      quad += u * u;
      logdet += std::log(params.scale[j]);
    }
    return std::lgamma(0.5 * (nu + m)) - std::lgamma(0.5 * nu) - 0.5 * m * std::log(nu * kPi) - logdet -
           0.5 * (nu + m) * std::log1p(quad / nu);
  }
  const double norm = std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * kPi);
  double lp = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double u = (x[j] - params.mean[j]) / params.scale[j];
    lp += norm - std::log(params.scale[j]) - 0.5 * (nu + 1) * std::log1p(u * u / nu);
  }
  return lp;
}

double logpmf_bernoulli(std::span<const std::uint8_t> y, const BernoulliVec& probs) {
  require_same(y.size(), probs.size(), "logpmf_bernoulli");
  double lp = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 1) throw std::invalid_argument("logpmf_bernoulli: label vector must be binary");
    const double p = probs.probs()[i];
    lp += y[i] ? std::log(p) : std::log1p(-p);
  }
  return lp;
}

double kl_diag_normal(const DiagNormalParams& p, const DiagNormalParams& q) {
  require_params(p.mean, p.scale, "kl_diag_normal");
  require_params(q.mean, q.scale, "kl_diag_normal");
  require_same(p.dim(), q.dim(), "kl_diag_normal");
  double kl = 0;
  for (std::size_t j = 0; j < p.dim(); ++j) {
    const double r = p.scale[j] / q.scale[j];
    const double d = (p.mean[j] - q.mean[j]) / q.scale[j];
    kl += 0.5 * (r * r + d * d - 1.0) - std::log(r);
  }
  return kl;
}

double kl_mv_bernoulli(const BernoulliVec& p, const BernoulliVec& q) {
  require_same(p.size(), q.size(), "kl_mv_bernoulli");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p.probs()[i], b = q.probs()[i];
    kl += a * std::log(a / b) + (1 - a) * std::log((1 - a) / (1 - b));
  }
  return kl;
}

double kl_student_same_nu_upper_bound(const DiagStudentParams& p, const DiagStudentParams& q) {
  require_params(p.mean, p.scale, "kl_student_same_nu_upper_bound");
  require_params(q.mean, q.scale, "kl_student_same_nu_upper_bound");
  require_same(p.dim(), q.dim(), "kl_student_same_nu_upper_bound");
  if (p.dof != q.dof) throw std::invalid_argument("kl_student_same_nu_upper_bound: degrees of freedom differ");
  const double nu = p.dof;
  if (!(nu > 2)) throw std::invalid_argument("kl_student_same_nu_upper_bound: requires dof > 2");
  const auto m = static_cast<double>(p.dim());
  // det and trace of diagonal matrices reduce to products and sums over dimensions.
  double half_log_det_ratio = 0, trace_scale = 0, trace_mean = 0;
  for (std::size_t j = 0; j < p.dim(); ++j) {
    const double vp = p.scale[j] * p.scale[j];
    const double vq = q.scale[j] * q.scale[j];
    half_log_det_ratio += 0.5 * std::log(vq / vp);
    trace_scale += (nu / (nu - 2)) * vp / vq;
    const double d = p.mean[j] - q.mean[j];
    trace_mean += d * d / vq;
  }
  return half_log_det_ratio - 0.5 * (nu + m) * (digamma(0.5 * (nu + m)) - digamma(0.5 * nu)) +
         0.5 * (nu + m) * std::log1p(trace_scale / nu + trace_mean / nu);
}

double entropy_diag_student(const DiagStudentParams& params) {
  require_params(params.mean, params.scale, "entropy_diag_student");
  const double nu = params.dof;
  const auto m = static_cast<double>(params.dim());
  double logdet = 0;
  for (double s : params.scale) logdet += std::log(s);
  return logdet + 0.5 * m * std::log(nu * kPi) + std::lgamma(0.5 * nu) - std::lgamma(0.5 * (nu + m)) +
         0.5 * (nu + m) * (digamma(0.5 * (nu + m)) - digamma(0.5 * nu));
}

double entropy_diag_normal(const DiagNormalParams& params) {
  require_params(params.mean, params.scale, "entropy_diag_normal");
  double h = 0.5 * static_cast<double>(params.dim()) * (1.0 + kLog2Pi);
  for (double s : params.scale) h += std::log(s);
  return h;
}

}  // namespace lsnpc
