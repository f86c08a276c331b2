#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "zobil/problems.hpp"
#include "zobil/projection.hpp"
#include "zobil/smoothing.hpp"
#include "zobil/solver_jh.hpp"
#include "zobil/trace.hpp"

namespace zobil {

/// Configuration of the penalty-reformulation solver. The inner loop runs a
/// joint SGD pair (y_t toward the minimizer of f/lambda + g, z_t toward the
/// minimizer of g) with shared random draws; the outer loop needs only
/// first-order-style forward differences of both oracles.
struct PenaltyConfig {
  std::int64_t n_outer = 0;
  StepSchedule alpha;            // outer step alpha_k > 0
  double inner_beta = 0.0;       // joint inner SGD step
  std::int64_t inner_iters = 1;  // t_k
  std::int64_t batch = 1;        // s_k
  double lambda = 1.0;           // penalty weight
  double eta = 0.0;              // x-block smoothing radius
  double mu = 0.0;               // y-block smoothing radius
  ProjectionSpec projection;
  bool warm_start = true;     // carry (y, z) across outer iterations
  bool inner_f_at_y = true;   // evaluate the inner F-difference at y_t (else z_t)
  std::int64_t log_stride = 1;
  std::optional<std::int64_t> budget_scaled_queries;

  void validate() const {
    if (n_outer < 0) throw InvalidParameterError("PenaltyConfig: n_outer must be >= 0");
    if (inner_iters < 1 || batch < 1)
      throw InvalidParameterError("PenaltyConfig: loop counts must be >= 1");
    if (!(lambda > 0.0)) throw InvalidParameterError("PenaltyConfig: lambda must be > 0");
    if (!(eta > 0.0) || !(mu > 0.0))
      throw InvalidParameterError("PenaltyConfig: smoothing radii must be > 0");
    if (!(inner_beta >= 0.0)) throw InvalidParameterError("PenaltyConfig: inner_beta must be >= 0");
    if (log_stride < 1) throw InvalidParameterError("PenaltyConfig: log_stride must be >= 1");
    for (std::int64_t k = 0; k < std::min<std::int64_t>(n_outer, 4); ++k)
      if (!(alpha.at(k) > 0.0)) throw InvalidParameterError("PenaltyConfig: alpha_k must be > 0");
  }

  /// When the instance constants are known, lambda must clear the surrogate
  /// fidelity threshold 4 l1f / lam_g.
  void validate_against(const ProblemConstants& c) const {
    if (c.l1f > 0.0 && c.lam_g > 0.0 && lambda < 4.0 * c.l1f / c.lam_g)
      throw ConfigError("PenaltyConfig: lambda below the 4 l1f / lam_g threshold");
  }
};

/// The paired inner state; both vectors are updated with shared draws.
struct InnerPairState {
  Eigen::VectorXd y;
  Eigen::VectorXd z;
};

/// One joint inner step. A single direction v and a single lower-oracle
/// noise substream are shared by the two lower differences (at y_t and z_t);
/// the upper difference reuses v with its own noise and is evaluated at y_t
/// by default (z_t behind the flag). Takes 1/lambda rather than lambda so the
/// noise-cancellation structure can be exercised exactly at inv_lambda == 0.
/// Consumes exactly 4 G-evaluations and 2 F-evaluations.
inline InnerPairState inner_step_pair(const StochasticScalarOracle& F,
                                      const StochasticScalarOracle& G,
                                      const Eigen::VectorXd& x_k, const InnerPairState& state,
                                      double beta, double inv_lambda, double mu,
                                      const RngStream& stream, bool f_at_y = true) {
  if (!(beta >= 0.0)) throw InvalidParameterError("inner_step_pair: beta must be >= 0");
  if (!(mu > 0.0)) throw InvalidParameterError("inner_step_pair: mu must be > 0");
  if (!(inv_lambda >= 0.0))
    throw InvalidParameterError("inner_step_pair: inv_lambda must be >= 0");
  RngStream dirs = stream.child(kDirLabel, 0);
  const Eigen::VectorXd v = sample_gaussian(dirs, state.y.size());
  const RngStream gnoise = stream.child("gnoise", 0);
  const RngStream fnoise = stream.child("fnoise", 0);
  const auto diff = [&](const StochasticScalarOracle& Q, const Eigen::VectorXd& at,
                        const RngStream& noise) {
    const double q_pert = Q(x_k, at + mu * v, noise);
    const double q_center = Q(x_k, at, noise);
    return (q_pert - q_center) / mu;
  };
  const double gy = diff(G, state.y, gnoise);
  const double gz = diff(G, state.z, gnoise);
  const double fd = diff(F, f_at_y ? state.y : state.z, fnoise);
  if (!std::isfinite(gy) || !std::isfinite(gz) || !std::isfinite(fd))
    throw NumericError("inner_step_pair: non-finite oracle difference");
  InnerPairState next;
  next.z = state.z - beta * (gz * v);
  next.y = state.y - beta * ((inv_lambda * fd + gy) * v);
  return next;
}

/// One outer update. Each batch sample draws one direction u and one
/// lower-oracle noise substream shared between the two lower differences
/// (at ybar and zbar) plus one upper-oracle noise substream for the upper
/// difference at zbar:
///   [dF_z + lambda (dG_y - dG_z)] u
/// averaged over the batch, then a prox step. The lambda term is the
/// finite-difference stand-in for the second-order part of the hypergradient.
/// Consumes exactly 2 s_k F-evaluations and 4 s_k G-evaluations.
inline OuterStep outer_step_penalty(const StochasticScalarOracle& F,
                                    const StochasticScalarOracle& G, const Eigen::VectorXd& x_k,
                                    const Eigen::VectorXd& ybar_k, const Eigen::VectorXd& zbar_k,
                                    const PenaltyConfig& cfg, double alpha_k,
                                    const RngStream& stream) {
  if (cfg.batch < 1) throw InvalidParameterError("outer_step_penalty: batch must be >= 1");
  const Eigen::Index n = x_k.size();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  for (std::int64_t i = 0; i < cfg.batch; ++i) {
    RngStream sample = stream.child(kSampleLabel, static_cast<std::uint64_t>(i));
    RngStream dirs = sample.child(kDirLabel, 0);
    const Eigen::VectorXd u = sample_gaussian(dirs, n);
    const RngStream gnoise = sample.child("gnoise", 0);
    const RngStream fnoise = sample.child("fnoise", 0);
    const Eigen::VectorXd x_pert = x_k + cfg.eta * u;
    const double df_z = (F(x_pert, zbar_k, fnoise) - F(x_k, zbar_k, fnoise)) / cfg.eta;
    const double dg_y = (G(x_pert, ybar_k, gnoise) - G(x_k, ybar_k, gnoise)) / cfg.eta;
    const double dg_z = (G(x_pert, zbar_k, gnoise) - G(x_k, zbar_k, gnoise)) / cfg.eta;
    const double scalar = df_z + cfg.lambda * (dg_y - dg_z);
    detail::check_sample_finite(scalar, "outer_step_penalty", i);
    acc.noalias() += scalar * u;
  }
  Eigen::VectorXd grad = acc / static_cast<double>(cfg.batch);
  return {prox_step(cfg.projection, x_k, grad, alpha_k), std::move(grad)};
}

/// Full penalty-solver run. Starting point drawn from stream/init[0] exactly
/// as run_jh (so both solvers share x0, y0 at equal seeds); z0 starts at y0.
/// With warm_start the inner pair carries across outer iterations, otherwise
/// it is reset to (y0, z0) each iteration.
inline RunResult run_penalty(const BilevelProblem& problem, const PenaltyConfig& cfg,
                             const RngStream& root) {
  cfg.validate();
  cfg.projection.validate(problem.n);
  if (problem.constants) cfg.validate_against(*problem.constants);
  RunResult out;
  RngStream init = root.child("init", 0);
  Eigen::VectorXd x = cfg.projection.project(sample_gaussian(init, problem.n));
  const Eigen::VectorXd y0 = sample_gaussian(init, problem.m);
  InnerPairState state{y0, y0};
  detail::RunLogger logger(problem, cfg.log_stride, cfg.n_outer, out);
  logger.log(0, x, std::numeric_limits<double>::quiet_NaN());
  const double inv_lambda = 1.0 / cfg.lambda;
  const double guard = 1e6 * (1.0 + y0.norm());
  std::int64_t completed = 0;
  try {
    for (std::int64_t k = 0; k < cfg.n_outer; ++k) {
      RngStream sk = root.child("outer", static_cast<std::uint64_t>(k));
      if (!cfg.warm_start) state = InnerPairState{y0, y0};
      RngStream lower = sk.child("lower", 0);
      for (std::int64_t t = 0; t < cfg.inner_iters; ++t) {
        state = inner_step_pair(problem.F, problem.G, x, state, cfg.inner_beta, inv_lambda,
                                cfg.mu, lower.child("step", static_cast<std::uint64_t>(t)),
                                cfg.inner_f_at_y);
        if (!state.y.allFinite() || !state.z.allFinite() || state.y.norm() > guard ||
            state.z.norm() > guard)
          throw DivergenceError("run_penalty: inner pair diverged at outer " +
                                std::to_string(k) + ", step " + std::to_string(t));
      }
      const OuterStep step = outer_step_penalty(problem.F, problem.G, x, state.y, state.z, cfg,
                                                cfg.alpha.at(k), sk.child("upper", 0));
      x = step.x_next;
      ++completed;
      logger.log(k + 1, x, step.surrogate_grad.norm());
      if (cfg.budget_scaled_queries && logger.scaled_queries() >= *cfg.budget_scaled_queries)
        break;
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  detail::choose_output_index(cfg.alpha, completed, root, out.trace);
  return out;
}

inline RunResult run_penalty(const BilevelProblem& problem, const PenaltyConfig& cfg,
                             std::uint64_t root_seed) {
  return run_penalty(problem, cfg, RngStream(root_seed));
}

/// Tuning knobs for penalty_schedule.
struct PenaltyTuning {
  double c_alpha = 1.0;         // alpha = c_alpha / (5 l1psi)
  double c_inner_step = 1.0;    // inner_beta = c eps / m
  double c_lambda = 1.0;        // lambda = c / sqrt(eps)
  double c_batch = 1.0;         // s_k = c n / eps
  double c_inner_iters = 1.0;   // t_k = c m / eps
  double c_eta = 1.0;           // eta = c sqrt(min(1/(lambda^2 n^3), eps/n^3))
  double c_mu = 1.0;            // mu  = c sqrt(eps / m^3)
  double c_outer_iters = 1.0;   // n_outer = c / eps
  std::optional<std::int64_t> cap_inner_iters;
  std::optional<std::int64_t> cap_batch;
  std::optional<std::int64_t> cap_outer_iters;
  std::optional<double> alpha_override;
};

/// Default outer step when l1psi is unknown (black-box upper objective).
inline constexpr double kPenaltyDefaultAlpha = 0.01;

/// Plugged-in schedule at target accuracy eps:
///   alpha = 1/(5 l1psi)  (or the 0.01 default when l1psi is unknown)
///   lambda = max(c / sqrt(eps), 4 l1f / lam_g when constants are known)
///   s = n/eps, t = m/eps, inner_beta = eps/m,
///   eta = sqrt(min(1/(lambda^2 n^3), eps/n^3)),  mu = sqrt(eps/m^3).
inline PenaltyConfig penalty_schedule(Eigen::Index n, Eigen::Index m, double eps,
                                      const ProblemConstants& consts,
                                      const PenaltyTuning& tuning = {}) {
  if (!(eps > 0.0 && eps < 1.0))
    throw InvalidParameterError("penalty_schedule: eps must lie in (0, 1)");
  if (n < 1 || m < 1) throw InvalidParameterError("penalty_schedule: dimensions must be >= 1");
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);

  PenaltyConfig cfg;
  if (tuning.alpha_override) {
    cfg.alpha = StepSchedule::constant(*tuning.alpha_override);
  } else if (consts.l1psi > 0.0) {
    cfg.alpha = StepSchedule::constant(tuning.c_alpha / (5.0 * consts.l1psi));
  } else {
    cfg.alpha = StepSchedule::constant(kPenaltyDefaultAlpha);
  }

  double lambda = tuning.c_lambda / std::sqrt(eps);
  if (consts.l1f > 0.0 && consts.lam_g > 0.0)
    lambda = std::max(lambda, 4.0 * consts.l1f / consts.lam_g);
  cfg.lambda = lambda;

  auto cap = [](std::int64_t v, const std::optional<std::int64_t>& c) {
    return c ? std::min(v, std::max<std::int64_t>(*c, 1)) : v;
  };
  cfg.batch = cap(static_cast<std::int64_t>(std::ceil(tuning.c_batch * nd / eps)),
                  tuning.cap_batch);
  cfg.inner_iters = cap(static_cast<std::int64_t>(std::ceil(tuning.c_inner_iters * md / eps)),
                        tuning.cap_inner_iters);
  cfg.inner_beta = tuning.c_inner_step * eps / md;
  cfg.n_outer = cap(static_cast<std::int64_t>(std::ceil(tuning.c_outer_iters / eps)),
                    tuning.cap_outer_iters);
  cfg.eta = tuning.c_eta *
            std::sqrt(std::min(1.0 / (lambda * lambda * nd * nd * nd), eps / (nd * nd * nd)));
  cfg.mu = tuning.c_mu * std::sqrt(eps / (md * md * md));
  return cfg;
}

}  // namespace zobil
