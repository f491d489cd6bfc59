#include "lsnpc/special.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lsnpc {

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("digamma requires x > 0, got " + std::to_string(x));
  double acc = 0.0;
  // Shift upward until the asymptotic expansion is accurate to double precision.
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number series: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760, 1/12.
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double log_gamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma requires x > 0, got " + std::to_string(x));
  return std::lgamma(x);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace lsnpc
