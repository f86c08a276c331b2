#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "zobil/smoothing.hpp"
#include "zobil/types.hpp"

namespace zobil {

/// Configuration of the stochastic Hessian-inverse-vector approximation:
/// biased SGD on the auxiliary quadratic
///   j(z) = z^T (hess_yy of the smoothed lower objective) z / 2
///          - (y-gradient of the smoothed upper objective)^T z,
/// whose minimizer is the Hessian-inverse / gradient product the outer
/// solver needs. Uses eta2, mu1, mu2 of `smoothing`; eta1 is ignored here.
struct HessInvConfig {
  double step_size = 0.0;       // beta
  std::int64_t iterations = 1;  // T >= 1
  SmoothingParams smoothing;
  std::optional<Eigen::VectorXd> z0;  // defaults to the zero vector

  void validate() const {
    if (!(step_size >= 0.0) || !std::isfinite(step_size))
      throw InvalidParameterError("HessInvConfig: step_size must be finite and >= 0");
    if (iterations < 1) throw InvalidParameterError("HessInvConfig: iterations must be >= 1");
    if (!std::isfinite(step_size * static_cast<double>(iterations)))
      throw InvalidParameterError("HessInvConfig: step_size * iterations must be finite");
    if (!(smoothing.mu1 > 0.0) || !(smoothing.mu2 > 0.0) || smoothing.eta2 < 0.0)
      throw InvalidParameterError("HessInvConfig: needs mu1 > 0, mu2 > 0, eta2 >= 0");
  }
};

/// One stochastic gradient of j(z): the matrix-free y-Hessian application to z
/// minus a single-sample y-gradient estimate of the upper objective.
/// Consumes exactly 3 G-evaluations and 2 F-evaluations; draws the direction
/// pair (u, v) for the Hessian part and v' for the gradient part.
inline Eigen::VectorXd grad_j_sample(const StochasticScalarOracle& F,
                                     const StochasticScalarOracle& G,
                                     const Eigen::VectorXd& xbar, const Eigen::VectorXd& ybar,
                                     const Eigen::VectorXd& z, const SmoothingParams& params,
                                     const RngStream& stream) {
  if (!(params.mu1 > 0.0) || !(params.mu2 > 0.0))
    throw InvalidParameterError("grad_j_sample: mu1 and mu2 must be > 0");
  const ApplyEstimate hz =
      zo_hess_yy_apply(G, xbar, ybar, params.eta2, params.mu2, z, stream.child("hess", 0));
  const GradEstimate fy = zo_grad_y(F, xbar, ybar, 0.0, params.mu1, 1, stream.child("fgrad", 0));
  return hz.value - fy.value;
}

/// Runs T SGD steps z <- z - beta * grad_j_sample(z) and returns z_T.
/// Consumes exactly 3T G-evaluations and 2T F-evaluations. Aborts with
/// DivergenceError when ||z|| exceeds 1e6 (1 + ||z0||), which signals a step
/// size too large for the sample variance.
inline Eigen::VectorXd approx_hess_inv_vec(const StochasticScalarOracle& F,
                                           const StochasticScalarOracle& G,
                                           const Eigen::VectorXd& xbar,
                                           const Eigen::VectorXd& ybar,
                                           const HessInvConfig& cfg, const RngStream& stream) {
  cfg.validate();
  Eigen::VectorXd z = cfg.z0 ? *cfg.z0 : Eigen::VectorXd::Zero(ybar.size());
  if (z.size() != ybar.size())
    throw InvalidParameterError("approx_hess_inv_vec: z0 must have the y dimension");
  const double guard = 1e6 * (1.0 + z.norm());
  for (std::int64_t tau = 0; tau < cfg.iterations; ++tau) {
    Eigen::VectorXd gj;
    try {
      gj = grad_j_sample(F, G, xbar, ybar, z, cfg.smoothing, stream.child("iter", tau));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (hessinv iteration " + std::to_string(tau) +
                         ")");
    }
    z -= cfg.step_size * gj;
    if (!z.allFinite() || z.norm() > guard)
      throw DivergenceError("approx_hess_inv_vec: iterate diverged at iteration " +
                            std::to_string(tau));
  }
  return z;
}

/// Tuning knobs for hessinv_schedule; the plugged-in rates hide constants.
struct HessInvTuning {
  double c_step = 1.0;    // multiplies eps / (m (m+n)^2)
  double c_iters = 1.0;   // multiplies (m (m+n)^2 / eps) log(1/eps)
  double c_smooth = 1.0;  // clamps the smoothing radii
  std::optional<std::int64_t> max_iterations;  // desk-scale cap on T
};

/// Schedule for the Hessian-inverse approximation at target accuracy eps:
///   beta = c_step eps / (m (m+n)^2),
///   T    = ceil(c_iters (m (m+n)^2 / eps) log(1/eps)), at least 1,
///   mu1  = min(c_smooth, 1/m),  eta2 = mu2 = min(c_smooth, 1/sqrt(m+n)).
/// When max_iterations caps T, beta is re-derived from beta * T = log(1/eps)
/// so the contraction horizon of the uncapped schedule is preserved.
inline HessInvConfig hessinv_schedule(Eigen::Index m, Eigen::Index n, double eps,
                                      const HessInvTuning& tuning = {}) {
  if (!(eps > 0.0 && eps < 1.0))
    throw InvalidParameterError("hessinv_schedule: eps must lie in (0, 1)");
  if (m < 1 || n < 1) throw InvalidParameterError("hessinv_schedule: dimensions must be >= 1");
  const double md = static_cast<double>(m);
  const double dim = md * static_cast<double>(m + n) * static_cast<double>(m + n);
  const double log_term = std::log(1.0 / eps);
  auto iters = static_cast<std::int64_t>(std::ceil(tuning.c_iters * dim / eps * log_term));
  iters = std::max<std::int64_t>(iters, 1);
  double beta = tuning.c_step * eps / dim;
  if (tuning.max_iterations && iters > *tuning.max_iterations) {
    iters = std::max<std::int64_t>(*tuning.max_iterations, 1);
    beta = log_term / static_cast<double>(iters);
  }
  HessInvConfig cfg;
  cfg.step_size = beta;
  cfg.iterations = iters;
  const double mu1 = std::min(tuning.c_smooth, 1.0 / md);
  const double em2 = std::min(tuning.c_smooth, 1.0 / std::sqrt(static_cast<double>(m + n)));
  cfg.smoothing = SmoothingParams{em2, mu1, em2, em2};
  return cfg;
}

}  // namespace zobil
