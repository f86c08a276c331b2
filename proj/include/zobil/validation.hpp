#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "zobil/problems.hpp"
#include "zobil/smoothing.hpp"
#include "zobil/solver_jh.hpp"

namespace zobil {

/// Central finite-difference gradient of a deterministic scalar function;
/// O(h^2) error on thrice-differentiable functions, exact on quadratics.
inline Eigen::VectorXd fd_grad(const std::function<double(const Eigen::VectorXd&)>& func,
                               const Eigen::VectorXd& x, double h) {
  if (!(h > 0.0)) throw InvalidParameterError("fd_grad: h must be > 0");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd e = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    e[i] = x[i] + h;
    const double fp = func(e);
    e[i] = x[i] - h;
    const double fm = func(e);
    e[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Outcome of one statistical or bound check; `reference` is the target or
/// bound the measurement was held against.
struct CheckReport {
  std::string name;
  double measured = 0.0;
  double reference = 0.0;
  bool pass = false;
  std::string detail;
};

struct McMeanResult {
  CheckReport report;
  Eigen::VectorXd mean;
  double agg_std_err = 0.0;     // sqrt(sum of per-coordinate squared standard errors)
  double second_moment = 0.0;   // mean of ||draw||^2, for the bound audits
};

/// Monte-Carlo mean test: draws M vectors via draw(rep), passes when
/// ||mean - target|| <= z * aggregate standard error. Also reports the
/// empirical second moment for comparison with the closed-form bounds.
inline McMeanResult mc_mean_check(const std::function<Eigen::VectorXd(std::int64_t)>& draw,
                                  const Eigen::VectorXd& target, std::int64_t samples, double z,
                                  std::string name = "mc_mean_check") {
  if (samples < 100) throw InvalidParameterError("mc_mean_check: needs at least 100 samples");
  const Eigen::Index d = target.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(d);
  double norm2_sum = 0.0;
  for (std::int64_t r = 0; r < samples; ++r) {
    const Eigen::VectorXd v = draw(r);
    if (v.size() != d) throw InvalidParameterError("mc_mean_check: draw dimension mismatch");
    sum += v;
    sumsq += v.cwiseProduct(v);
    norm2_sum += v.squaredNorm();
  }
  const double M = static_cast<double>(samples);
  McMeanResult out;
  out.mean = sum / M;
  const Eigen::VectorXd var =
      (sumsq / M - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0);  // population variance
  out.agg_std_err = std::sqrt(var.sum() / M);
  out.second_moment = norm2_sum / M;
  out.report.name = std::move(name);
  out.report.measured = (out.mean - target).norm();
  out.report.reference = z * out.agg_std_err;
  out.report.pass = out.report.measured <= out.report.reference;
  return out;
}

/// Shared inputs of the closed-form second-moment bounds. Gradient norms and
/// Hessian Frobenius norms are those of the underlying deterministic function
/// at the probe point; sigma* are the oracle-noise variance bounds.
struct BoundInputs {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  double eta = 0.0;
  double mu = 0.0;
  std::int64_t batch = 1;
  double l1q = 0.0;
  double l2q = 0.0;
  double sigma1q2 = 0.0;
  double sigma2q2 = 0.0;
  double grad_x_norm2 = 0.0;
  double grad_y_norm2 = 0.0;
  double hess_xx_fro2 = 0.0;
  double hess_xy_fro2 = 0.0;
  double hess_yy_fro2 = 0.0;
  double theta_norm2 = 1.0;
};

/// Second-moment bound for the minibatch forward-difference x-gradient:
///   L1^2/N (eta^2 (n+6)^3 + mu^4/eta^2 n (m+4)^2)
/// + 4(n+2)/N (sigma1^2 + ||grad_x||^2) + 4 mu^2/(eta^2 N) n (sigma1^2 + ||grad_y||^2).
inline double grad_x_second_moment_bound(const BoundInputs& b) {
  const double n = static_cast<double>(b.n), m = static_cast<double>(b.m);
  const double N = static_cast<double>(b.batch);
  const double e2 = b.eta * b.eta, m2 = b.mu * b.mu;
  double out = b.l1q * b.l1q / N * (e2 * std::pow(n + 6.0, 3));
  if (b.mu > 0.0) out += b.l1q * b.l1q / N * (m2 * m2 / e2 * n * (m + 4.0) * (m + 4.0));
  out += 4.0 * (n + 2.0) / N * (b.sigma1q2 + b.grad_x_norm2);
  if (b.mu > 0.0) out += 4.0 * m2 / (e2 * N) * n * (b.sigma1q2 + b.grad_y_norm2);
  return out;
}

/// x<->y mirror of grad_x_second_moment_bound.
inline double grad_y_second_moment_bound(const BoundInputs& b) {
  BoundInputs s = b;
  std::swap(s.n, s.m);
  std::swap(s.eta, s.mu);
  std::swap(s.grad_x_norm2, s.grad_y_norm2);
  return grad_x_second_moment_bound(s);
}

/// Second-moment bound for the minibatch central-difference mixed block
/// applied to theta.
inline double hess_xy_apply_second_moment_bound(const BoundInputs& b) {
  const double n = static_cast<double>(b.n), m = static_cast<double>(b.m);
  const double N = static_cast<double>(b.batch);
  const double e2 = b.eta * b.eta, m2 = b.mu * b.mu;
  double out = 8.0 * b.l2q * b.l2q / N *
               (e2 * e2 / m2 * std::pow(n + 8.0, 4) + 2.0 * m2 * m2 / e2 * n * std::pow(m + 12.0, 3));
  out += (6.0 * e2 / m2 * (n + 4.0) * (n + 2.0) * (b.sigma2q2 + b.hess_xx_fro2) +
          36.0 * (n + 2.0) * (b.sigma2q2 + b.hess_xy_fro2) +
          30.0 * m2 / e2 * n * (m + 2.0) * (b.sigma2q2 + b.hess_yy_fro2)) /
         N;
  return out * b.theta_norm2;
}

/// Second-moment bound for the single-sample x-block Hessian applied to
/// theta (deterministic function):
///   2 L2^2 (2 eta^2 (n+16)^4 + mu^6/eta^4 (m+6)^3 (n+3)) ||theta||^2
/// + (15/2 (n+6)^2 ||Hxx||_F^2 + 3 mu^2/eta^2 (3n+13) ||Hxy||_F^2
///    + 3 mu^4/(2 eta^4) (m+2)(n+3) ||Hyy||_F^2) ||theta||^2.
inline double hess_xx_apply_second_moment_bound(const BoundInputs& b) {
  const double n = static_cast<double>(b.n), m = static_cast<double>(b.m);
  const double e2 = b.eta * b.eta, m2 = b.mu * b.mu;
  const double e4 = e2 * e2;
  double out = 2.0 * b.l2q * b.l2q * (2.0 * e2 * std::pow(n + 16.0, 4));
  if (b.mu > 0.0)
    out += 2.0 * b.l2q * b.l2q * (m2 * m2 * m2 / e4 * std::pow(m + 6.0, 3) * (n + 3.0));
  out += 7.5 * (n + 6.0) * (n + 6.0) * b.hess_xx_fro2;
  if (b.mu > 0.0) {
    out += 3.0 * m2 / e2 * (3.0 * n + 13.0) * b.hess_xy_fro2;
    out += 1.5 * m2 * m2 / e4 * (m + 2.0) * (n + 3.0) * b.hess_yy_fro2;
  }
  return out * b.theta_norm2;
}

/// x<->y symmetric form of hess_xx_apply_second_moment_bound, matching the
/// y-block estimator (eta == 0 drops the x-perturbation terms).
inline double hess_yy_apply_second_moment_bound(const BoundInputs& b) {
  BoundInputs s = b;
  std::swap(s.n, s.m);
  std::swap(s.eta, s.mu);
  std::swap(s.hess_xx_fro2, s.hess_yy_fro2);
  return hess_xx_apply_second_moment_bound(s);
}

/// Fourth-moment bound for the single-sample forward-difference x-gradient
/// of a deterministic function.
inline double grad_x_fourth_moment_bound(const BoundInputs& b) {
  const double n = static_cast<double>(b.n), m = static_cast<double>(b.m);
  const double e4 = std::pow(b.eta, 4), m4 = std::pow(b.mu, 4);
  const double l4 = std::pow(b.l1q, 4);
  double out = 4.0 * l4 * e4 * std::pow(n + 12.0, 6);
  if (b.mu > 0.0)
    out += 4.0 * l4 * (m4 * m4 / e4) * (n + 4.0) * (n + 4.0) * std::pow(m + 8.0, 4);
  out += 192.0 * (n * n + 10.0 * n + 24.0) * b.grad_x_norm2 * b.grad_x_norm2;
  if (b.mu > 0.0)
    out += 192.0 * (n + 4.0) * (n + 4.0) * (m4 / e4) * b.grad_y_norm2 * b.grad_y_norm2;
  return out;
}

/// Bounds are inequalities; the slack absorbs Monte-Carlo error on the
/// measured side only.
inline CheckReport audit_bound(std::string name, double measured, double bound,
                               double slack = 0.2) {
  CheckReport r;
  r.name = std::move(name);
  r.measured = measured;
  r.reference = (1.0 + slack) * bound;
  r.pass = measured <= r.reference;
  return r;
}

/// Audits a measured second moment of the x-gradient estimator against the
/// closed-form bound.
inline CheckReport bound_audit_grad(const BoundInputs& inputs, double measured_second_moment,
                                    double slack = 0.2, std::string name = "bound_audit_grad") {
  return audit_bound(std::move(name), measured_second_moment,
                     grad_x_second_moment_bound(inputs), slack);
}

struct SmoothedGapReport {
  double gap_deterministic = 0.0;  // high-precision solve of the smoothed inner problem
  double gap_stochastic = 0.0;     // inner_loop_y route at a tiny radius
  double bound = 0.0;              // (2 l1g / lam_g) (eta2^2 n + mu2^2 m)
  bool pass = false;
};

/// Smoothed-minimizer gap on a quadratic instance. Gaussian smoothing shifts
/// a quadratic objective by a constant, so the smoothed inner minimizer
/// equals the exact one; the check solves the smoothed problem two ways and
/// verifies both the near-zero gap and the closed-form upper bound.
inline SmoothedGapReport smoothed_gap_check(const QuadraticModel& model,
                                            const SmoothingParams& params,
                                            const std::vector<Eigen::VectorXd>& x_probes,
                                            double tolerance = 1e-6) {
  const auto& spec = model.spec();
  const ProblemConstants consts = model.constants();
  SmoothedGapReport rep;
  rep.bound = 2.0 * consts.l1g / consts.lam_g *
              (params.eta2 * params.eta2 * static_cast<double>(model.n()) +
               params.mu2 * params.mu2 * static_cast<double>(model.m()));
  auto counter = std::make_shared<QueryCounter>();
  StochasticScalarOracle g_oracle(
      [&model](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream&) {
        return model.g(x, y);
      },
      OracleKind::Lower, counter);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.B);
  const double step = 1.0 / es.eigenvalues().maxCoeff();
  std::uint64_t probe_index = 0;
  for (const Eigen::VectorXd& x : x_probes) {
    const Eigen::VectorXd ystar = model.y_star(x);
    // deterministic route: gradient descent on the smoothed inner objective,
    // whose gradient equals B y - C x exactly for the quadratic
    Eigen::VectorXd y = Eigen::VectorXd::Zero(model.m());
    for (int it = 0; it < 20000; ++it) {
      const Eigen::VectorXd grad = spec.B * y - spec.C * x;
      if (grad.norm() <= 1e-14 * (1.0 + ystar.norm())) break;
      y -= step * grad;
    }
    rep.gap_deterministic = std::max(rep.gap_deterministic, (y - ystar).norm());
    // stochastic route: the solver's own inner loop at a tiny radius
    RngStream stream(20240700u + probe_index);
    const Eigen::VectorXd y_sto =
        inner_loop_y(g_oracle, x, ystar, 0.05, 20000, 1e-9, stream.child("gap", probe_index));
    rep.gap_stochastic = std::max(rep.gap_stochastic, (y_sto - ystar).norm());
    ++probe_index;
  }
  rep.pass = rep.gap_deterministic <= tolerance && rep.gap_stochastic <= tolerance &&
             rep.gap_deterministic <= rep.bound + tolerance &&
             rep.gap_stochastic <= rep.bound + tolerance;
  return rep;
}

}  // namespace zobil
