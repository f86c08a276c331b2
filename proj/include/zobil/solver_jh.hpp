#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "zobil/hessinv.hpp"
#include "zobil/problems.hpp"
#include "zobil/projection.hpp"
#include "zobil/smoothing.hpp"
#include "zobil/trace.hpp"

namespace zobil {

/// Configuration of the Hessian-inverse-based double-loop solver: an inner
/// SGD pass on the lower objective per outer prox step on x, with the
/// hypergradient assembled from minibatch zeroth-order estimates and the
/// Hessian-inverse-vector approximation.
struct JHConfig {
  std::int64_t n_outer = 0;      // a full run logs n_outer + 1 checkpoints
  StepSchedule alpha;            // outer step alpha_k > 0
  double inner_beta = 0.0;       // inner SGD step
  std::int64_t inner_iters = 1;  // t_k
  std::int64_t batch = 1;        // s_k
  std::int64_t hessinv_iters = 1;  // b_k
  double hessinv_beta = 0.0;
  SmoothingParams smoothing;
  ProjectionSpec projection;
  bool warm_start = false;  // inner loop restarts from the input y0 by default
  std::int64_t log_stride = 1;
  std::optional<std::int64_t> budget_scaled_queries;  // stop once exceeded

  void validate() const {
    if (n_outer < 0) throw InvalidParameterError("JHConfig: n_outer must be >= 0");
    if (inner_iters < 1 || batch < 1 || hessinv_iters < 1)
      throw InvalidParameterError("JHConfig: loop counts must be >= 1");
    if (!(inner_beta >= 0.0) || !(hessinv_beta >= 0.0))
      throw InvalidParameterError("JHConfig: step sizes must be >= 0");
    if (log_stride < 1) throw InvalidParameterError("JHConfig: log_stride must be >= 1");
    smoothing.validate();
    for (std::int64_t k = 0; k < std::min<std::int64_t>(n_outer, 4); ++k)
      if (!(alpha.at(k) > 0.0)) throw InvalidParameterError("JHConfig: alpha_k must be > 0");
  }
};

/// t_k steps of single-sample SGD on the lower objective, perturbing only the
/// y block. Consumes exactly 2 t_k lower-oracle evaluations; returns y_{t_k}.
inline Eigen::VectorXd inner_loop_y(const StochasticScalarOracle& G, const Eigen::VectorXd& x_k,
                                    const Eigen::VectorXd& y_init, double beta,
                                    std::int64_t t_k, double mu2, const RngStream& stream) {
  if (t_k < 1) throw InvalidParameterError("inner_loop_y: t_k must be >= 1");
  Eigen::VectorXd y = y_init;
  const double guard = 1e6 * (1.0 + y_init.norm());
  for (std::int64_t t = 0; t < t_k; ++t) {
    const GradEstimate gy = zo_grad_y(G, x_k, y, 0.0, mu2, 1, stream.child("step", t));
    y -= beta * gy.value;
    if (!y.allFinite() || y.norm() > guard)
      throw DivergenceError("inner_loop_y: iterate diverged at step " + std::to_string(t));
  }
  return y;
}

struct OuterStep {
  Eigen::VectorXd x_next;
  Eigen::VectorXd surrogate_grad;
};

/// One outer update: minibatch x-gradient of the upper objective (x block
/// perturbed only), minibatch mixed-Hessian estimate of the lower objective,
/// Hessian-inverse-vector approximation, prox step. Consumes
/// 2 s_k + 2 b_k upper and 3 s_k + 3 b_k lower oracle evaluations.
inline OuterStep outer_step_jh(const StochasticScalarOracle& F, const StochasticScalarOracle& G,
                               const Eigen::VectorXd& x_k, const Eigen::VectorXd& ybar_k,
                               const JHConfig& cfg, double alpha_k, const RngStream& stream) {
  const GradEstimate fx =
      zo_grad_x(F, x_k, ybar_k, cfg.smoothing.eta1, 0.0, cfg.batch, stream.child("fgrad", 0));
  const HessEstimate gxy = zo_hess_xy(G, x_k, ybar_k, cfg.smoothing.eta2, cfg.smoothing.mu2,
                                      cfg.batch, stream.child("hxy", 0));
  HessInvConfig hcfg;
  hcfg.step_size = cfg.hessinv_beta;
  hcfg.iterations = cfg.hessinv_iters;
  hcfg.smoothing = cfg.smoothing;
  const Eigen::VectorXd h =
      approx_hess_inv_vec(F, G, x_k, ybar_k, hcfg, stream.child("hessinv", 0));
  Eigen::VectorXd grad = fx.value - gxy.value * h;
  if (!grad.allFinite()) throw NumericError("outer_step_jh: non-finite surrogate gradient");
  return {prox_step(cfg.projection, x_k, grad, alpha_k), std::move(grad)};
}

namespace detail {

/// Trace bookkeeping shared by both solvers.
class RunLogger {
 public:
  RunLogger(const BilevelProblem& problem, std::int64_t log_stride, std::int64_t n_outer,
            RunResult& out)
      : problem_(problem),
        base_(problem.counter->snapshot()),
        stride_(log_stride),
        n_outer_(n_outer),
        out_(out) {}

  void log(std::int64_t k, const Eigen::VectorXd& x, double surrogate_norm) const {
    TraceRecord r;
    r.k = k;
    const QueryCount now = problem_.counter->snapshot() - base_;
    r.f_evals = now.f_evals;
    r.g_evals = now.g_evals;
    const bool want_true = problem_.analytic && problem_.analytic->hypergrad &&
                           (k % stride_ == 0 || k == n_outer_);
    if (want_true) r.hypergrad_norm = true_hypergrad(problem_, x).norm();
    r.surrogate_norm = surrogate_norm;
    out_.trace.records.push_back(r);
  }

  std::int64_t scaled_queries() const {
    const QueryCount now = problem_.counter->snapshot() - base_;
    return now.total() * problem_.query_scale;
  }

 private:
  const BilevelProblem& problem_;
  QueryCount base_;
  std::int64_t stride_;
  std::int64_t n_outer_;
  RunResult& out_;
};

inline void choose_output_index(const StepSchedule& alpha, std::int64_t completed,
                                const RngStream& root, ConvergenceTrace& trace) {
  if (completed < 1) {
    trace.chosen_index = 0;
    return;
  }
  std::vector<double> w(static_cast<std::size_t>(completed));
  for (std::int64_t k = 0; k < completed; ++k) w[static_cast<std::size_t>(k)] = alpha.at(k);
  RngStream s = root.child("choose", 0);
  trace.chosen_index = sample_output_index(w, s);
}

}  // namespace detail

/// Full double-loop run from a fresh start drawn from stream/init[0]
/// (x0 projected onto the feasible set, y0 standard normal). Every outer
/// iteration runs the inner loop from the input y0 (warm_start carries the
/// previous inner solution instead). Logs one record per outer iteration
/// plus the initial state; on divergence the partial trace is returned with
/// the error message attached.
inline RunResult run_jh(const BilevelProblem& problem, const JHConfig& cfg,
                        const RngStream& root) {
  cfg.validate();
  cfg.projection.validate(problem.n);
  RunResult out;
  RngStream init = root.child("init", 0);
  Eigen::VectorXd x = cfg.projection.project(sample_gaussian(init, problem.n));
  const Eigen::VectorXd y0 = sample_gaussian(init, problem.m);
  Eigen::VectorXd y = y0;
  detail::RunLogger logger(problem, cfg.log_stride, cfg.n_outer, out);
  logger.log(0, x, std::numeric_limits<double>::quiet_NaN());
  std::int64_t completed = 0;
  try {
    for (std::int64_t k = 0; k < cfg.n_outer; ++k) {
      RngStream sk = root.child("outer", static_cast<std::uint64_t>(k));
      y = inner_loop_y(problem.G, x, cfg.warm_start ? y : y0, cfg.inner_beta, cfg.inner_iters,
                       cfg.smoothing.mu2, sk.child("lower", 0));
      const OuterStep step =
          outer_step_jh(problem.F, problem.G, x, y, cfg, cfg.alpha.at(k), sk.child("upper", 0));
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

inline RunResult run_jh(const BilevelProblem& problem, const JHConfig& cfg,
                        std::uint64_t root_seed) {
  return run_jh(problem, cfg, RngStream(root_seed));
}

/// Tuning knobs for jh_schedule. Caps realize desk-scale runs; when the
/// Hessian-inverse iteration cap binds, its step size follows the capped rule
/// of hessinv_schedule.
struct JHTuning {
  double c_alpha = 1.0;        // alpha = c_alpha / (5 l1psi)
  double c_inner_step = 1.0;   // inner_beta = c eps / m
  double c_inner_iters = 1.0;  // t_k = c (m/eps) log(m/eps)
  double c_batch = 1.0;        // s_k = c max(24 (n+2), sqrt(n m)) / eps
  double c_outer_iters = 1.0;  // n_outer = c / eps
  HessInvTuning hessinv;
  std::optional<std::int64_t> cap_inner_iters;
  std::optional<std::int64_t> cap_batch;
  std::optional<std::int64_t> cap_outer_iters;
  std::optional<double> alpha_override;  // bypasses l1psi when it is unknown
};

/// Plugged-in schedule at target accuracy eps:
///   alpha  = 1 / (5 l1psi)                     (constant)
///   s_k    = max(24 (n+2), sqrt(n m)) / eps
///   eta1 = mu1 = min(1/(n+m)^2, sqrt(eps/(n+m)^3))
///   eta2 = mu2 = min(1/(n+m),   sqrt(eps/(n+m)))
///   inner_beta = eps / m,  t_k = (m/eps) log(m/eps)
///   b_k and hessinv_beta from hessinv_schedule
///   n_outer = 1 / eps.
inline JHConfig jh_schedule(Eigen::Index n, Eigen::Index m, double eps,
                            const ProblemConstants& consts, const JHTuning& tuning = {}) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidParameterError("jh_schedule: eps must lie in (0, 1)");
  if (n < 1 || m < 1) throw InvalidParameterError("jh_schedule: dimensions must be >= 1");
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  const double dd = nd + md;

  JHConfig cfg;
  if (tuning.alpha_override) {
    cfg.alpha = StepSchedule::constant(*tuning.alpha_override);
  } else {
    if (!(consts.l1psi > 0.0))
      throw InvalidParameterError("jh_schedule: l1psi unknown; set alpha_override");
    cfg.alpha = StepSchedule::constant(tuning.c_alpha / (5.0 * consts.l1psi));
  }

  auto cap = [](std::int64_t v, const std::optional<std::int64_t>& c) {
    return c ? std::min(v, std::max<std::int64_t>(*c, 1)) : v;
  };
  cfg.batch = cap(static_cast<std::int64_t>(
                      std::ceil(tuning.c_batch * std::max(24.0 * (nd + 2.0), std::sqrt(nd * md)) / eps)),
                  tuning.cap_batch);
  const double log_m_eps = std::max(std::log(md / eps), 1.0);
  cfg.inner_iters = cap(static_cast<std::int64_t>(
                            std::ceil(tuning.c_inner_iters * (md / eps) * log_m_eps)),
                        tuning.cap_inner_iters);
  cfg.inner_beta = tuning.c_inner_step * eps / md;
  cfg.n_outer = cap(static_cast<std::int64_t>(std::ceil(tuning.c_outer_iters / eps)),
                    tuning.cap_outer_iters);

  const double em1 = std::min(1.0 / (dd * dd), std::sqrt(eps / (dd * dd * dd)));
  const double em2 = std::min(1.0 / dd, std::sqrt(eps / dd));
  cfg.smoothing = SmoothingParams{em1, em1, em2, em2};

  const HessInvConfig h = hessinv_schedule(m, n, eps, tuning.hessinv);
  cfg.hessinv_iters = h.iterations;
  cfg.hessinv_beta = h.step_size;
  return cfg;
}

}  // namespace zobil
