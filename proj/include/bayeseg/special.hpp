#pragma once

#include <cmath>
#include <stdexcept>

namespace bayeseg {

/// ln Gamma(x), x > 0.  Lanczos approximation (g = 7, 9 coefficients),
/// good to better than 1e-13 relative over the positive axis.
inline double log_gamma_fn(double x) {
  if (!(x > 0.0))
    throw std::domain_error("log_gamma_fn: argument must be positive");
  static const double kCoef[9] = {
      0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
      771.32342877765313,       -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,     9.9843695780195716e-6, 1.5056327351493116e-7};
  // Reflection is not needed (x > 0), but small x goes through the
  // recurrence lnG(x) = lnG(x+1) - ln x once for stability near zero.
  if (x < 0.5) return log_gamma_fn(x + 1.0) - std::log(x);
  const double z = x - 1.0;
  double series = kCoef[0];
  for (int i = 1; i < 9; ++i) series += kCoef[i] / (z + i);
  const double t = z + 7.5;
  return 0.5 * std::log(2.0 * M_PI) + (z + 0.5) * std::log(t) - t +
         std::log(series);
}

/// Digamma Psi(x), x > 0.  Upward recurrence Psi(x) = Psi(x+1) - 1/x to
/// x >= 6, then the asymptotic series with Bernoulli terms through B16.
inline double digamma(double x) {
  if (!(x > 0.0))
    throw std::domain_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // B2/2, B4/4, ..., B16/16 over x^{2n}
  double series = inv2 * (1.0 / 12.0 -
                  inv2 * (1.0 / 120.0 -
                  inv2 * (1.0 / 252.0 -
                  inv2 * (1.0 / 240.0 -
                  inv2 * (1.0 / 132.0 -
                  inv2 * (691.0 / 32760.0 -
                  inv2 * (1.0 / 12.0 -
                  inv2 * (3617.0 / 8160.0))))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

}  // namespace bayeseg
