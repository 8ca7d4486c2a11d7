#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bayeseg/grid.hpp"
#include "bayeseg/model.hpp"
#include "bayeseg/special.hpp"

namespace bayeseg {

/// E_q[-ln(1 - pi_k)] = Psi(alpha + beta) - Psi(beta).  Strictly positive
/// for valid Beta parameters.
inline double pi_bracket(const BetaVector& q_pi, int k) {
  return digamma(q_pi.alpha[k] + q_pi.beta[k]) - digamma(q_pi.beta[k]);
}

/// Closed-form refresh of the line field q(upsilon):
///   shape = gamma_upsilon + K/2
///   rate  = phi_upsilon + 1/2 sum_k w_k [ (D mu_x)^2 + <sigma_x^2, d^2> ]
/// where w = softmax over the label mean channels.
inline GammaField update_q_upsilon(const VariationalState& s,
                                   const Hyperparams& h,
                                   const StencilOperator& op) {
  const int K = s.K();
  const ImageGrid dmu = op.apply(s.q_x.mean[0]);
  const ImageGrid rsq = op.row_squared_apply(s.q_x.variance(0));
  const std::vector<ImageGrid> w = softmax_weights(s.q_z.mean);

  GammaField out = GammaField::constant(s.width(), s.height(), 1,
                                        h.gamma_upsilon + 0.5 * K, 1.0);
  for (std::size_t i = 0; i < out.rate[0].size(); ++i) {
    const double quad = dmu[i] * dmu[i] + rsq[i];
    double data_term = 0.0;
    for (int k = 0; k < K; ++k) data_term += w[k][i] * quad;
    out.rate[0][i] = 0.5 * data_term + h.phi_upsilon;
  }
  return out;
}

/// Closed-form refresh of the boundary field q(omega), per class:
///   shape = gamma_omega + 1/2
///   rate  = phi_omega + 1/2 [Psi(a+b) - Psi(b)] [ (D mu_zk)^2 + <sigma_zk^2, d^2> ]
inline GammaField update_q_omega(const VariationalState& s,
                                 const Hyperparams& h,
                                 const StencilOperator& op) {
  const int K = s.K();
  GammaField out = GammaField::constant(s.width(), s.height(), K,
                                        h.gamma_omega + 0.5, 1.0);
  for (int k = 0; k < K; ++k) {
    const double bracket = pi_bracket(s.q_pi, k);
    if (!(bracket > 0.0))
      throw std::runtime_error("update_q_omega: nonpositive digamma bracket");
    const ImageGrid dmu = op.apply(s.q_z.mean[k]);
    const ImageGrid rsq = op.row_squared_apply(s.q_z.variance(k));
    for (std::size_t i = 0; i < out.rate[k].size(); ++i)
      out.rate[k][i] =
          0.5 * bracket * (dmu[i] * dmu[i] + rsq[i]) + h.phi_omega;
  }
  return out;
}

/// Closed-form refresh of the class probabilities q(pi):
///   alpha = alpha_pi + d_y/2
///   beta  = beta_pi + 1/2 sum_i mu_omega_ki [ (D mu_zk)_i^2 + 2 sigma_zki^2 ]
inline BetaVector update_q_pi(const VariationalState& s, const Hyperparams& h,
                              const StencilOperator& op) {
  const int K = s.K();
  const double d_y = static_cast<double>(s.q_x.mean[0].size());
  BetaVector out;
  out.alpha.assign(K, h.alpha_pi + 0.5 * d_y);
  out.beta.assign(K, h.beta_pi);
  for (int k = 0; k < K; ++k) {
    const ImageGrid dmu = op.apply(s.q_z.mean[k]);
    const ImageGrid omega_mean = s.q_omega.posterior_mean(k);
    const ImageGrid var = s.q_z.variance(k);
    double acc = 0.0;
    for (std::size_t i = 0; i < dmu.size(); ++i)
      acc += omega_mean[i] * (dmu[i] * dmu[i] + 2.0 * var[i]);
    out.beta[k] += 0.5 * acc;
  }
  return out;
}

/// Closed-form refresh of the noise precision q(rho) from one
/// reparameterized contour/basis sample:
///   shape = gamma_rho + 1/2
///   rate  = phi_rho + 1/2 (y - x - m)^2
inline GammaField update_q_rho(const VariationalState& /*s*/,
                               const Hyperparams& h,
                               const ImageGrid& y, const ImageGrid& x_sample,
                               const ImageGrid& m_sample) {
  require_same_shape(y, x_sample, "update_q_rho");
  require_same_shape(y, m_sample, "update_q_rho");
  GammaField out = GammaField::constant(y.width, y.height, 1,
                                        h.gamma_rho + 0.5, 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - x_sample[i] - m_sample[i];
    out.rate[0][i] = 0.5 * r * r + h.phi_rho;
  }
  return out;
}

/// Deterministic variant: replaces the sampled residual square by its exact
/// expectation (y - mu_x - mu_m)^2 + sigma_x^2 + sigma_m^2.
inline GammaField update_q_rho_exact(const VariationalState& s,
                                     const Hyperparams& h, const ImageGrid& y) {
  require_same_shape(y, s.q_x.mean[0], "update_q_rho_exact");
  const ImageGrid var_x = s.q_x.variance(0);
  const ImageGrid var_m = s.q_m.variance(0);
  GammaField out = GammaField::constant(y.width, y.height, 1,
                                        h.gamma_rho + 0.5, 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - s.q_x.mean[0][i] - s.q_m.mean[0][i];
    out.rate[0][i] = 0.5 * (r * r + var_x[i] + var_m[i]) + h.phi_rho;
  }
  return out;
}

}  // namespace bayeseg
