#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "zobil/oracle.hpp"
#include "zobil/rng.hpp"

namespace zobil {

/// Substream layout shared by every estimator in this header. Sample i of a
/// batch draws its Gaussian directions (x block first, then y block) from
///   stream/sample[i]/dir[0]
/// and hands the oracle its noise from
///   stream/sample[i]/noise[0].
/// All evaluations belonging to one sample receive that same noise substream
/// (common random numbers), exactly as the estimators are defined.
inline constexpr std::string_view kSampleLabel = "sample";
inline constexpr std::string_view kDirLabel = "dir";
inline constexpr std::string_view kNoiseLabel = "noise";

/// Minibatch gradient estimate with its exact query cost attached.
struct GradEstimate {
  Eigen::VectorXd value;
  std::int64_t samples_used = 0;
  std::int64_t evals_consumed = 0;
};

struct HessEstimate {
  Eigen::MatrixXd value;
  std::int64_t samples_used = 0;
  std::int64_t evals_consumed = 0;
};

/// Single-sample matrix-free Hessian application.
struct ApplyEstimate {
  Eigen::VectorXd value;
  std::int64_t evals_consumed = 0;
};

namespace detail {

inline void check_sample_finite(double v, std::string_view where, std::int64_t sample) {
  if (!std::isfinite(v))
    throw NumericError(std::string(where) + ": non-finite oracle output at sample " +
                       std::to_string(sample));
}

}  // namespace detail

/// Forward-difference estimate of the x-block gradient:
///   (1/N) sum_i [Q(x + eta u_i, y + mu v_i) - Q(x, y)] / eta * u_i .
/// mu == 0 leaves the y block untouched and skips the v_i draw.
/// Consumes exactly 2N oracle evaluations.
inline GradEstimate zo_grad_x(const StochasticScalarOracle& Q, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y, double eta, double mu,
                              std::int64_t batch, const RngStream& stream) {
  if (!(eta > 0.0)) throw InvalidParameterError("zo_grad_x: eta must be > 0");
  if (!(mu >= 0.0)) throw InvalidParameterError("zo_grad_x: mu must be >= 0");
  if (batch < 1) throw InvalidParameterError("zo_grad_x: batch must be >= 1");
  const Eigen::Index n = x.size();
  const Eigen::Index m = y.size();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  for (std::int64_t i = 0; i < batch; ++i) {
    RngStream sample = stream.child(kSampleLabel, static_cast<std::uint64_t>(i));
    RngStream dirs = sample.child(kDirLabel, 0);
    const Eigen::VectorXd u = sample_gaussian(dirs, n);
    const RngStream noise = sample.child(kNoiseLabel, 0);
    double q_pert;
    if (mu > 0.0) {
      const Eigen::VectorXd v = sample_gaussian(dirs, m);
      q_pert = Q(x + eta * u, y + mu * v, noise);
    } else {
      q_pert = Q(x + eta * u, y, noise);
    }
    const double q_center = Q(x, y, noise);
    detail::check_sample_finite(q_pert - q_center, "zo_grad_x", i);
    acc.noalias() += ((q_pert - q_center) / eta) * u;
  }
  return {acc / static_cast<double>(batch), batch, 2 * batch};
}

/// y-block mirror of zo_grad_x; eta == 0 leaves the x block untouched,
/// which is the lower-level single-block estimator used by both solvers.
/// Consumes exactly 2N oracle evaluations.
inline GradEstimate zo_grad_y(const StochasticScalarOracle& Q, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y, double eta, double mu,
                              std::int64_t batch, const RngStream& stream) {
  if (!(mu > 0.0)) throw InvalidParameterError("zo_grad_y: mu must be > 0");
  if (!(eta >= 0.0)) throw InvalidParameterError("zo_grad_y: eta must be >= 0");
  if (batch < 1) throw InvalidParameterError("zo_grad_y: batch must be >= 1");
  const Eigen::Index n = x.size();
  const Eigen::Index m = y.size();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
  for (std::int64_t i = 0; i < batch; ++i) {
    RngStream sample = stream.child(kSampleLabel, static_cast<std::uint64_t>(i));
    RngStream dirs = sample.child(kDirLabel, 0);
    Eigen::VectorXd x_pert = x;
    if (eta > 0.0) x_pert += eta * sample_gaussian(dirs, n);
    const Eigen::VectorXd v = sample_gaussian(dirs, m);
    const RngStream noise = sample.child(kNoiseLabel, 0);
    const double q_pert = Q(x_pert, y + mu * v, noise);
    const double q_center = Q(x, y, noise);
    detail::check_sample_finite(q_pert - q_center, "zo_grad_y", i);
    acc.noalias() += ((q_pert - q_center) / mu) * v;
  }
  return {acc / static_cast<double>(batch), batch, 2 * batch};
}

/// Central-difference estimate of the mixed second-derivative block:
///   (1/N) sum_i u_i v_i^T [Q(x+eta u_i, y+mu v_i) + Q(x-eta u_i, y-mu v_i) - 2 Q(x,y)] / (2 eta mu).
/// Consumes exactly 3N oracle evaluations (plus/minus/center share one noise substream).
inline HessEstimate zo_hess_xy(const StochasticScalarOracle& Q, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y, double eta, double mu,
                               std::int64_t batch, const RngStream& stream) {
  if (!(eta > 0.0)) throw InvalidParameterError("zo_hess_xy: eta must be > 0");
  if (!(mu > 0.0)) throw InvalidParameterError("zo_hess_xy: mu must be > 0");
  if (batch < 1) throw InvalidParameterError("zo_hess_xy: batch must be >= 1");
  const Eigen::Index n = x.size();
  const Eigen::Index m = y.size();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, m);
  for (std::int64_t i = 0; i < batch; ++i) {
    RngStream sample = stream.child(kSampleLabel, static_cast<std::uint64_t>(i));
    RngStream dirs = sample.child(kDirLabel, 0);
    const Eigen::VectorXd u = sample_gaussian(dirs, n);
    const Eigen::VectorXd v = sample_gaussian(dirs, m);
    const RngStream noise = sample.child(kNoiseLabel, 0);
    const double q_plus = Q(x + eta * u, y + mu * v, noise);
    const double q_minus = Q(x - eta * u, y - mu * v, noise);
    const double q_center = Q(x, y, noise);
    const double scalar = (q_plus + q_minus - 2.0 * q_center) / (2.0 * eta * mu);
    detail::check_sample_finite(scalar, "zo_hess_xy", i);
    acc.noalias() += scalar * (u * v.transpose());
  }
  return {acc / static_cast<double>(batch), batch, 3 * batch};
}

/// Central-difference estimate of the x-block Hessian via the second-order
/// Stein identity:  (1/N) sum_i (u_i u_i^T - I) [central difference] / (2 eta^2).
/// mu == 0 skips the y perturbation. Consumes exactly 3N oracle evaluations.
inline HessEstimate zo_hess_xx(const StochasticScalarOracle& Q, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y, double eta, double mu,
                               std::int64_t batch, const RngStream& stream) {
  if (!(eta > 0.0)) throw InvalidParameterError("zo_hess_xx: eta must be > 0");
  if (!(mu >= 0.0)) throw InvalidParameterError("zo_hess_xx: mu must be >= 0");
  if (batch < 1) throw InvalidParameterError("zo_hess_xx: batch must be >= 1");
  const Eigen::Index n = x.size();
  const Eigen::Index m = y.size();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (std::int64_t i = 0; i < batch; ++i) {
    RngStream sample = stream.child(kSampleLabel, static_cast<std::uint64_t>(i));
    RngStream dirs = sample.child(kDirLabel, 0);
    const Eigen::VectorXd u = sample_gaussian(dirs, n);
    Eigen::VectorXd y_plus = y, y_minus = y;
    if (mu > 0.0) {
      const Eigen::VectorXd v = sample_gaussian(dirs, m);
      y_plus += mu * v;
      y_minus -= mu * v;
    }
    const RngStream noise = sample.child(kNoiseLabel, 0);
    const double q_plus = Q(x + eta * u, y_plus, noise);
    const double q_minus = Q(x - eta * u, y_minus, noise);
    const double q_center = Q(x, y, noise);
    const double scalar = (q_plus + q_minus - 2.0 * q_center) / (2.0 * eta * eta);
    detail::check_sample_finite(scalar, "zo_hess_xx", i);
    acc.noalias() += scalar * (u * u.transpose());
    acc.diagonal().array() -= scalar;
  }
  return {acc / static_cast<double>(batch), batch, 3 * batch};
}

/// Single-sample application of the y-block Hessian estimate to a fixed
/// vector z, without forming the matrix:
///   (v v^T - I) [Q(x+eta2 u, y+mu2 v) + Q(x-eta2 u, y-mu2 v) - 2 Q(x,y)] / (2 mu2^2) z
/// computed as  c (v <v,z> - z)  in O(m). eta2 == 0 skips the x perturbation.
/// Consumes exactly 3 oracle evaluations.
inline ApplyEstimate zo_hess_yy_apply(const StochasticScalarOracle& Q, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& y, double eta2, double mu2,
                                      const Eigen::VectorXd& z, const RngStream& stream) {
  if (!(mu2 > 0.0)) throw InvalidParameterError("zo_hess_yy_apply: mu2 must be > 0");
  if (!(eta2 >= 0.0)) throw InvalidParameterError("zo_hess_yy_apply: eta2 must be >= 0");
  if (z.size() != y.size())
    throw InvalidParameterError("zo_hess_yy_apply: z must have the y dimension");
  const Eigen::Index n = x.size();
  const Eigen::Index m = y.size();
  RngStream sample = stream.child(kSampleLabel, 0);
  RngStream dirs = sample.child(kDirLabel, 0);
  Eigen::VectorXd x_plus = x, x_minus = x;
  if (eta2 > 0.0) {
    const Eigen::VectorXd u = sample_gaussian(dirs, n);
    x_plus += eta2 * u;
    x_minus -= eta2 * u;
  }
  const Eigen::VectorXd v = sample_gaussian(dirs, m);
  const RngStream noise = sample.child(kNoiseLabel, 0);
  const double q_plus = Q(x_plus, y + mu2 * v, noise);
  const double q_minus = Q(x_minus, y - mu2 * v, noise);
  const double q_center = Q(x, y, noise);
  const double scalar = (q_plus + q_minus - 2.0 * q_center) / (2.0 * mu2 * mu2);
  detail::check_sample_finite(scalar, "zo_hess_yy_apply", 0);
  return {scalar * (v * v.dot(z) - z), 3};
}

}  // namespace zobil
