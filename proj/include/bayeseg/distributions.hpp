#pragma once

#include <cmath>
#include <stdexcept>

#include "bayeseg/special.hpp"

namespace bayeseg {

/// Gamma distribution in (shape, rate) order.  Mean = shape / rate.
struct GammaParams {
  double shape;
  double rate;
  GammaParams(double shape_, double rate_) : shape(shape_), rate(rate_) {
    if (!(shape > 0.0) || !(rate > 0.0))
      throw std::invalid_argument("GammaParams: shape and rate must be positive");
  }
  double mean() const { return shape / rate; }
};

struct BetaParams {
  double alpha;
  double beta;
  BetaParams(double alpha_, double beta_) : alpha(alpha_), beta(beta_) {
    if (!(alpha > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("BetaParams: both shapes must be positive");
  }
};

struct GaussianParams {
  double mean;
  double variance;
  GaussianParams(double mean_, double variance_)
      : mean(mean_), variance(variance_) {
    if (!(variance > 0.0))
      throw std::invalid_argument("GaussianParams: variance must be positive");
    if (!std::isfinite(mean))
      throw std::invalid_argument("GaussianParams: mean must be finite");
  }
};

inline double log_gaussian_pdf(double value, const GaussianParams& p) {
  if (!std::isfinite(value))
    throw std::domain_error("log_gaussian_pdf: non-finite value");
  const double r = value - p.mean;
  return -0.5 * std::log(2.0 * M_PI * p.variance) -
         r * r / (2.0 * p.variance);
}

inline double log_gamma_pdf(double value, const GammaParams& p) {
  if (!(value > 0.0))
    throw std::domain_error("log_gamma_pdf: value must be positive");
  return p.shape * std::log(p.rate) - log_gamma_fn(p.shape) +
         (p.shape - 1.0) * std::log(value) - p.rate * value;
}

inline double log_beta_pdf(double value, const BetaParams& p) {
  if (!(value > 0.0 && value < 1.0))
    throw std::domain_error("log_beta_pdf: value must lie in (0,1)");
  return log_gamma_fn(p.alpha + p.beta) - log_gamma_fn(p.alpha) -
         log_gamma_fn(p.beta) + (p.alpha - 1.0) * std::log(value) +
         (p.beta - 1.0) * std::log1p(-value);
}

inline double kl_gaussian(const GaussianParams& q, const GaussianParams& p) {
  const double dm = q.mean - p.mean;
  return 0.5 * (std::log(p.variance / q.variance) +
                (q.variance + dm * dm) / p.variance - 1.0);
}

inline double kl_gamma(const GammaParams& q, const GammaParams& p) {
  return (q.shape - p.shape) * digamma(q.shape) - log_gamma_fn(q.shape) +
         log_gamma_fn(p.shape) + p.shape * (std::log(q.rate) - std::log(p.rate)) +
         q.shape * (p.rate - q.rate) / q.rate;
}

inline double kl_beta(const BetaParams& q, const BetaParams& p) {
  const double log_b_p = log_gamma_fn(p.alpha) + log_gamma_fn(p.beta) -
                         log_gamma_fn(p.alpha + p.beta);
  const double log_b_q = log_gamma_fn(q.alpha) + log_gamma_fn(q.beta) -
                         log_gamma_fn(q.alpha + q.beta);
  return log_b_p - log_b_q + (q.alpha - p.alpha) * digamma(q.alpha) +
         (q.beta - p.beta) * digamma(q.beta) +
         (p.alpha - q.alpha + p.beta - q.beta) * digamma(q.alpha + q.beta);
}

}  // namespace bayeseg
