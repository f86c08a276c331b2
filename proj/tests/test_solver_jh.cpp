#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "zobil/solver_jh.hpp"
#include "zobil/solver_penalty.hpp"
#include "zobil/validation.hpp"

using namespace zobil;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

StochasticScalarOracle plain_oracle(
    std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> f, OracleKind kind,
    std::shared_ptr<QueryCounter> counter = nullptr) {
  return StochasticScalarOracle(
      [f = std::move(f)](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream&) {
        return f(x, y);
      },
      kind, std::move(counter));
}

}  // namespace

TEST_CASE("inner loop contracts to the lower minimizer") {
  const Eigen::Index m = 8;
  const Eigen::VectorXd ystar = Eigen::VectorXd::Ones(m);
  const auto G = plain_oracle(
      [&ystar](const Eigen::VectorXd&, const Eigen::VectorXd& y) {
        return 0.5 * (y - ystar).squaredNorm();
      },
      OracleKind::Lower);
  std::vector<double> errs;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::VectorXd ybar =
        inner_loop_y(G, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(m), 0.2, 200, 1e-4,
                     RngStream(seed).child("inner", 0));
    errs.push_back((ybar - ystar).norm());
  }
  REQUIRE(median(errs) <= 0.1 * (1.0 + ystar.norm()));
}

TEST_CASE("inner loop no-op and query cost") {
  auto counter = std::make_shared<QueryCounter>();
  const auto G = plain_oracle(
      [](const Eigen::VectorXd&, const Eigen::VectorXd& y) { return 0.5 * y.squaredNorm(); },
      OracleKind::Lower, counter);
  Eigen::VectorXd y0(3);
  y0 << 1.0, -1.0, 2.0;
  const Eigen::VectorXd out =
      inner_loop_y(G, Eigen::VectorXd::Zero(2), y0, 0.0, 1, 1e-3, RngStream(3));
  REQUIRE(out == y0);
  REQUIRE(counter->snapshot().g_evals == 2);
  REQUIRE_THROWS_AS(inner_loop_y(G, Eigen::VectorXd::Zero(2), y0, 0.1, 0, 1e-3, RngStream(3)),
                    InvalidParameterError);
}

TEST_CASE("starting at the minimizer the inner loop only wanders by the smoothing bias") {
  const Eigen::Index m = 6;
  const Eigen::VectorXd ystar = Eigen::VectorXd::Ones(m);
  const auto G = plain_oracle(
      [&ystar](const Eigen::VectorXd&, const Eigen::VectorXd& y) {
        return 0.5 * (y - ystar).squaredNorm();
      },
      OracleKind::Lower);
  const double beta = 0.05;
  std::vector<double> errs;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::VectorXd ybar = inner_loop_y(G, Eigen::VectorXd::Zero(2), ystar, beta, 200,
                                              1e-3, RngStream(seed).child("fp", 0));
    errs.push_back((ybar - ystar).norm());
  }
  REQUIRE(median(errs) <= 10.0 * beta * (1.0 + static_cast<double>(m)));
}

TEST_CASE("inner loop divergence guard") {
  const auto G = plain_oracle(
      [](const Eigen::VectorXd&, const Eigen::VectorXd& y) { return 0.5 * y.squaredNorm(); },
      OracleKind::Lower);
  REQUIRE_THROWS_AS(inner_loop_y(G, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(8), 50.0,
                                 5000, 1e-3, RngStream(5)),
                    DivergenceError);
}

TEST_CASE("prox step closed forms") {
  Eigen::VectorXd x(3), d(3);
  x << 0.5, 0.5, 0.5;
  d << 4.0, -1.0, 0.0;
  // unconstrained prox is exactly the explicit gradient step
  REQUIRE(prox_step(ProjectionSpec::all_space(), x, d, 0.2) == Eigen::VectorXd(x - 0.2 * d));
  // box: first coordinate would land at -0.3, clamps to 0; others untouched
  const ProjectionSpec box =
      ProjectionSpec::box(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3));
  const Eigen::VectorXd clamped = prox_step(box, x, d, 0.2);
  REQUIRE(clamped[0] == 0.0);
  REQUIRE(clamped[1] == 0.7);
  REQUIRE(clamped[2] == 0.5);
  // ball: projection rescales onto the sphere
  const ProjectionSpec ball = ProjectionSpec::ball(Eigen::VectorXd::Zero(3), 0.25);
  const Eigen::VectorXd onball = prox_step(ball, x, d, 0.2);
  REQUIRE(onball.norm() == Catch::Approx(0.25));
  // zero step direction: x unchanged for all-space
  REQUIRE(prox_step(ProjectionSpec::all_space(), x, Eigen::VectorXd::Zero(3), 0.2) == x);
}

TEST_CASE("assembled surrogate gradient is unbiased for the analytic hypergradient") {
  // noiseless quadratic, inner solution injected exactly, large batch:
  // the mean over repetitions must sit within 5 standard errors of grad psi
  const QuadraticBilevelSpec spec = random_quadratic_spec(6, 6, 123);
  const BilevelProblem problem = make_quadratic(spec);
  const QuadraticModel model(spec);
  RngStream root(321);
  RngStream ps = root.child("x", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 6);
  const Eigen::VectorXd ystar = model.y_star(x);

  JHConfig cfg;
  cfg.batch = 10000;
  cfg.hessinv_iters = 9000;
  cfg.hessinv_beta = 1e-3;
  cfg.smoothing = SmoothingParams{1e-4, 1e-4, 1e-4, 1e-4};
  cfg.alpha = StepSchedule::constant(0.1);
  cfg.n_outer = 1;

  const Eigen::VectorXd target = model.hypergrad(x);
  const McMeanResult r = mc_mean_check(
      [&](std::int64_t rep) {
        const OuterStep step = outer_step_jh(problem.F, problem.G, x, ystar, cfg, 0.1,
                                             root.child("rep", rep));
        return step.surrogate_grad;
      },
      target, 100, 5.0, "assembled_hypergrad");  // small rep count, large batch
  INFO("measured " << r.report.measured << " gate " << r.report.reference << " target norm "
                   << target.norm());
  REQUIRE(r.report.pass);
}

TEST_CASE("run_jh with zero outer iterations logs a single record") {
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 9));
  JHConfig cfg;
  cfg.n_outer = 0;
  cfg.alpha = StepSchedule::constant(0.1);
  cfg.inner_beta = 0.01;
  cfg.inner_iters = 1;
  cfg.batch = 1;
  cfg.hessinv_iters = 1;
  cfg.hessinv_beta = 0.0;
  cfg.smoothing = SmoothingParams::uniform(0.01, 0.01);
  const RunResult r = run_jh(problem, cfg, 7u);
  REQUIRE_FALSE(r.error.has_value());
  REQUIRE(r.trace.records.size() == 1);
  REQUIRE(r.trace.records[0].k == 0);
  REQUIRE(r.trace.records[0].f_evals == 0);
  REQUIRE(std::isfinite(r.trace.records[0].hypergrad_norm));
  REQUIRE(std::isnan(r.trace.records[0].surrogate_norm));
}

TEST_CASE("query totals match the closed-form count") {
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 9));
  JHConfig cfg;
  cfg.n_outer = 3;
  cfg.alpha = StepSchedule::constant(0.05);
  cfg.inner_beta = 0.01;
  cfg.inner_iters = 5;   // t_k
  cfg.batch = 4;         // s_k
  cfg.hessinv_iters = 6; // b_k
  cfg.hessinv_beta = 1e-3;
  cfg.smoothing = SmoothingParams::uniform(0.01, 0.01);
  const RunResult r = run_jh(problem, cfg, 11u);
  REQUIRE_FALSE(r.error.has_value());
  const QueryCount total = problem.counter->snapshot();
  REQUIRE(total.f_evals == 3 * (2 * 4 + 2 * 6));
  REQUIRE(total.g_evals == 3 * (2 * 5 + 3 * 4 + 3 * 6));
  REQUIRE(r.trace.records.size() == 4);
  // strictly increasing query counts along the trace
  for (std::size_t i = 1; i < r.trace.records.size(); ++i) {
    REQUIRE(r.trace.records[i].f_evals > r.trace.records[i - 1].f_evals);
    REQUIRE(r.trace.records[i].g_evals > r.trace.records[i - 1].g_evals);
  }
}

TEST_CASE("output index distribution follows the step weights") {
  const std::vector<double> weights{1.0, 2.0, 3.0, 4.0};
  std::vector<std::int64_t> counts(4, 0);
  RngStream root(55);
  const std::int64_t M = 10000;
  for (std::int64_t i = 0; i < M; ++i) {
    RngStream s = root.child("draw", i);
    ++counts[static_cast<std::size_t>(sample_output_index(weights, s))];
  }
  double tv = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double p = weights[k] / 10.0;
    tv += std::abs(static_cast<double>(counts[k]) / static_cast<double>(M) - p);
  }
  REQUIRE(0.5 * tv <= 0.05);
}

TEST_CASE("a scaled-query budget stops the run early") {
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 9));
  JHConfig cfg;
  cfg.n_outer = 50;
  cfg.alpha = StepSchedule::constant(0.05);
  cfg.inner_beta = 0.01;
  cfg.inner_iters = 5;
  cfg.batch = 4;
  cfg.hessinv_iters = 6;
  cfg.hessinv_beta = 1e-3;
  cfg.smoothing = SmoothingParams::uniform(0.01, 0.01);
  const std::int64_t per_outer = 2 * 5 + 5 * 4 + 5 * 6;  // 60 raw queries
  cfg.budget_scaled_queries = 3 * per_outer;
  const RunResult r = run_jh(problem, cfg, 11u);
  REQUIRE_FALSE(r.error.has_value());
  REQUIRE(r.trace.records.size() == 4);  // stopped after 3 outer iterations
  REQUIRE(r.trace.chosen_index < 3);
}

TEST_CASE("both solvers share initial iterates at equal seeds") {
  const BilevelProblem p1 = make_quadratic(random_quadratic_spec(5, 4, 9));
  const BilevelProblem p2 = make_quadratic(random_quadratic_spec(5, 4, 9));
  JHConfig jh;
  jh.n_outer = 0;
  jh.alpha = StepSchedule::constant(0.1);
  jh.smoothing = SmoothingParams::uniform(0.01, 0.01);
  PenaltyConfig pen;
  pen.n_outer = 0;
  pen.alpha = StepSchedule::constant(0.1);
  pen.lambda = 8.0;
  pen.eta = 0.01;
  pen.mu = 0.01;
  const RunResult a = run_jh(p1, jh, 77u);
  const RunResult b = run_penalty(p2, pen, 77u);
  REQUIRE(a.trace.records[0].hypergrad_norm == b.trace.records[0].hypergrad_norm);
}

TEST_CASE("run_jh reports divergence with the partial trace") {
  QuadraticGenOptions opt;
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 9, opt));
  JHConfig cfg;
  cfg.n_outer = 5;
  cfg.alpha = StepSchedule::constant(0.1);
  cfg.inner_beta = 100.0;  // way past the stability limit
  cfg.inner_iters = 200;
  cfg.batch = 1;
  cfg.hessinv_iters = 1;
  cfg.hessinv_beta = 0.0;
  cfg.smoothing = SmoothingParams::uniform(0.01, 0.01);
  const RunResult r = run_jh(problem, cfg, 13u);
  REQUIRE(r.error.has_value());
  REQUIRE(r.trace.records.size() >= 1);
}

TEST_CASE("schedule plugs in the stated rates and caps") {
  ProblemConstants consts;
  consts.l1psi = 2.0;
  consts.lam_g = 1.0;
  const JHConfig cfg = jh_schedule(10, 10, 0.1, consts);
  REQUIRE(cfg.alpha.at(0) == Catch::Approx(0.1));  // 1 / (5 * 2)
  REQUIRE(cfg.batch == 2880);                      // max(24*12, 10)/0.1
  REQUIRE(cfg.smoothing.eta1 == Catch::Approx(0.0025));
  REQUIRE(cfg.smoothing.mu1 == Catch::Approx(0.0025));
  REQUIRE(cfg.smoothing.eta2 == Catch::Approx(0.05));
  REQUIRE(cfg.smoothing.mu2 == Catch::Approx(0.05));
  REQUIRE(cfg.inner_beta == Catch::Approx(0.01));  // eps / m
  REQUIRE(cfg.n_outer == 10);

  JHTuning tuning;
  tuning.cap_inner_iters = 512;
  tuning.cap_batch = 100;
  tuning.hessinv.max_iterations = 1000;
  const JHConfig desk = jh_schedule(10, 10, 0.01, consts, tuning);
  REQUIRE(desk.inner_iters == 512);
  REQUIRE(desk.batch == 100);
  REQUIRE(desk.hessinv_iters == 1000);
  REQUIRE_THROWS_AS(jh_schedule(10, 10, 1.5, consts), InvalidParameterError);
}

TEST_CASE("two runs with one seed are identical, different seeds differ") {
  const BilevelProblem p1 = make_quadratic(random_quadratic_spec(4, 4, 9));
  const BilevelProblem p2 = make_quadratic(random_quadratic_spec(4, 4, 9));
  JHConfig cfg;
  cfg.n_outer = 3;
  cfg.alpha = StepSchedule::constant(0.05);
  cfg.inner_beta = 0.05;
  cfg.inner_iters = 10;
  cfg.batch = 3;
  cfg.hessinv_iters = 5;
  cfg.hessinv_beta = 1e-3;
  cfg.smoothing = SmoothingParams::uniform(0.01, 0.01);
  const RunResult a = run_jh(p1, cfg, 42u);
  const RunResult b = run_jh(p2, cfg, 42u);
  REQUIRE(a.trace.records.size() == b.trace.records.size());
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    REQUIRE(a.trace.records[i].hypergrad_norm == b.trace.records[i].hypergrad_norm);
    const double sa = a.trace.records[i].surrogate_norm;
    const double sb = b.trace.records[i].surrogate_norm;
    REQUIRE((sa == sb || (std::isnan(sa) && std::isnan(sb))));
  }
  const BilevelProblem p3 = make_quadratic(random_quadratic_spec(4, 4, 9));
  const RunResult c = run_jh(p3, cfg, 43u);
  REQUIRE(a.trace.records.back().hypergrad_norm != c.trace.records.back().hypergrad_norm);
}
