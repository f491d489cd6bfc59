#pragma once

namespace lsnpc {

/// Digamma function for x > 0. Throws std::domain_error otherwise.
double digamma(double x);

/// Log-gamma for x > 0.
double log_gamma(double x);

/// Standard normal CDF.
double normal_cdf(double x);

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kPi = 3.14159265358979323846264338327950;

}  // namespace lsnpc
