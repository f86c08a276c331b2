#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

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

TEST_CASE("shared noise: disabled upper term keeps the pair bitwise equal") {
  // with 1/lambda = 0 and equal starts, y and z receive identical updates
  // through shared (v, zeta) draws, for any oracle
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(5, 5, 3));
  RngStream root(64);
  RngStream ps = root.child("pt", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 5);
  InnerPairState state;
  state.y = sample_gaussian(ps, 5);
  state.z = state.y;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    state = inner_step_pair(problem.F, problem.G, x, state, 0.05, 0.0, 1e-3,
                            root.child("step", t));
    REQUIRE(state.y == state.z);
  }
}

TEST_CASE("inner pair consumes exactly 4 lower and 2 upper evaluations per step") {
  auto counter = std::make_shared<QueryCounter>();
  const auto F = plain_oracle(
      [](const Eigen::VectorXd&, const Eigen::VectorXd& y) { return y.sum(); },
      OracleKind::Upper, counter);
  const auto G = plain_oracle(
      [](const Eigen::VectorXd&, const Eigen::VectorXd& y) { return 0.5 * y.squaredNorm(); },
      OracleKind::Lower, counter);
  InnerPairState state{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)};
  (void)inner_step_pair(F, G, Eigen::VectorXd::Zero(2), state, 0.1, 0.0, 1e-3, RngStream(4));
  REQUIRE(counter->snapshot().g_evals == 4);
  REQUIRE(counter->snapshot().f_evals == 2);  // upper term evaluated even when disabled
}

TEST_CASE("inner pair contracts on a quadratic lower objective") {
  const Eigen::Index m = 4;
  const auto F = plain_oracle([](const Eigen::VectorXd&, const Eigen::VectorXd&) { return 0.0; },
                              OracleKind::Upper);
  const auto G = plain_oracle(
      [](const Eigen::VectorXd&, const Eigen::VectorXd& y) { return 0.5 * y.squaredNorm(); },
      OracleKind::Lower);
  std::vector<double> start, finish;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream root(seed);
    RngStream ps = root.child("init", 0);
    InnerPairState state;
    state.y = sample_gaussian(ps, m);
    state.z = state.y;
    start.push_back(state.y.norm());
    for (std::uint64_t t = 0; t < 100; ++t)
      state = inner_step_pair(F, G, Eigen::VectorXd::Zero(2), state, 0.3, 0.0, 1e-4,
                              root.child("step", t));
    finish.push_back(state.y.norm());
  }
  REQUIRE(median(finish) < median(start));
}

TEST_CASE("pair difference converges to the lemma target -grad_y f / lambda") {
  // G = ||y - a||^2 / 2, F = <b, y>: y -> a - b/lambda (1 + o(1)), z -> a
  const Eigen::Index m = 8;
  RngStream ds = RngStream(71).child("data", 0);
  const Eigen::VectorXd a = sample_gaussian(ds, m);
  const Eigen::VectorXd b = sample_gaussian(ds, m);
  const double lambda = 100.0;
  const auto F = plain_oracle(
      [&b](const Eigen::VectorXd&, const Eigen::VectorXd& y) { return b.dot(y); },
      OracleKind::Upper);
  const auto G = plain_oracle(
      [&a](const Eigen::VectorXd&, const Eigen::VectorXd& y) {
        return 0.5 * (y - a).squaredNorm();
      },
      OracleKind::Lower);
  std::vector<double> devs;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    InnerPairState state{Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m)};
    RngStream root(1000 + seed);
    for (std::uint64_t t = 0; t < 2000; ++t)
      state = inner_step_pair(F, G, Eigen::VectorXd::Zero(2), state, 0.1, 1.0 / lambda, 1e-4,
                              root.child("step", t));
    devs.push_back(((state.y - state.z) - (-b / lambda)).norm());
  }
  REQUIRE(median(devs) <= 0.2 * b.norm() / lambda);
}

TEST_CASE("outer step reduces to a pure upper-gradient step when ybar == zbar") {
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 5));
  RngStream root(81);
  RngStream ps = root.child("pt", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 4);
  const Eigen::VectorXd w = sample_gaussian(ps, 4);
  PenaltyConfig cfg;
  cfg.batch = 16;
  cfg.lambda = 1e6;  // any weight: the lambda term cancels bitwise
  cfg.eta = 0.01;
  cfg.mu = 0.01;
  const OuterStep step =
      outer_step_penalty(problem.F, problem.G, x, w, w, cfg, 0.1, root.child("outer", 0));
  // mirror the pure-F assembly with the same streams
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(4);
  for (std::int64_t i = 0; i < cfg.batch; ++i) {
    RngStream sample = root.child("outer", 0).child(kSampleLabel, i);
    RngStream dirs = sample.child(kDirLabel, 0);
    const Eigen::VectorXd u = sample_gaussian(dirs, 4);
    const RngStream fnoise = sample.child("fnoise", 0);
    const double df =
        (problem.F(x + cfg.eta * u, w, fnoise) - problem.F(x, w, fnoise)) / cfg.eta;
    expected += df * u;
  }
  expected /= static_cast<double>(cfg.batch);
  REQUIRE(step.surrogate_grad == expected);
}

TEST_CASE("outer step consumes 2s upper and 4s lower evaluations") {
  auto counter = std::make_shared<QueryCounter>();
  const auto F = plain_oracle(
      [](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return x.sum(); },
      OracleKind::Upper, counter);
  const auto G = plain_oracle(
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
        return 0.5 * y.squaredNorm() - x.sum();
      },
      OracleKind::Lower, counter);
  PenaltyConfig cfg;
  cfg.batch = 7;
  cfg.lambda = 10.0;
  cfg.eta = 0.01;
  cfg.mu = 0.01;
  (void)outer_step_penalty(F, G, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2),
                           Eigen::VectorXd::Zero(2), cfg, 0.1, RngStream(9));
  REQUIRE(counter->snapshot().f_evals == 2 * 7);
  REQUIRE(counter->snapshot().g_evals == 4 * 7);
}

TEST_CASE("assembled surrogate approximates the hypergradient at large lambda") {
  // exact inner minimizers injected; the estimator mean is the analytic
  // surrogate gradient, within 1/lambda of grad psi
  const QuadraticBilevelSpec spec = random_quadratic_spec(10, 10, 2024);
  const BilevelProblem problem = make_quadratic(spec);
  const QuadraticModel model(spec);
  RngStream root(99);
  RngStream ps = root.child("x", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 10);
  const double lambda = 1000.0;
  const Eigen::VectorXd ybar = model.y_star_penalty(x, lambda);
  const Eigen::VectorXd zbar = model.z_star(x);
  PenaltyConfig cfg;
  cfg.batch = 10000;
  cfg.lambda = lambda;
  cfg.eta = 1e-5;
  cfg.mu = 1e-5;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(10);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(10);
  const int reps = 24;
  for (int rep = 0; rep < reps; ++rep) {
    const OuterStep step = outer_step_penalty(problem.F, problem.G, x, ybar, zbar, cfg, 0.1,
                                              root.child("rep", rep));
    mean += step.surrogate_grad;
    m2 += step.surrogate_grad.cwiseProduct(step.surrogate_grad);
  }
  mean /= reps;
  const Eigen::VectorXd var = (m2 / reps - mean.cwiseProduct(mean)).cwiseMax(0.0);
  const double se = std::sqrt(var.sum() / reps);
  const ProblemConstants c = model.constants();
  const double l_lambda = 4.0 * c.l0f * c.l1g / (c.lam_g * c.lam_g) * c.l1f;  // l2g = 0
  const double tol = std::max(5.0 * se, 10.0 * l_lambda / lambda);
  const double err = (mean - model.hypergrad(x)).norm();
  INFO("err " << err << " tol " << tol << " se " << se);
  REQUIRE(err <= tol);
}

TEST_CASE("penalty consistency: surrogate error decays like 1/lambda") {
  const QuadraticBilevelSpec spec = random_quadratic_spec(10, 10, 2024);
  const QuadraticModel model(spec);
  RngStream ps = RngStream(7).child("x", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 10);
  std::vector<double> lambdas{1e2, 1e3, 1e4};
  std::vector<double> logl, loge;
  for (double lam : lambdas) {
    const double err = (model.surrogate_grad(x, lam) - model.hypergrad(x)).norm();
    logl.push_back(std::log(lam));
    loge.push_back(std::log(err));
  }
  // least-squares slope over the three points
  const double mx = (logl[0] + logl[1] + logl[2]) / 3.0;
  const double my = (loge[0] + loge[1] + loge[2]) / 3.0;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 3; ++i) {
    num += (logl[i] - mx) * (loge[i] - my);
    den += (logl[i] - mx) * (logl[i] - mx);
  }
  const double slope = num / den;
  INFO("slope " << slope);
  REQUIRE(slope >= -1.2);
  REQUIRE(slope <= -0.8);
}

TEST_CASE("inner-minimizer gap obeys the 2 L0f / (lam_g lambda) bound") {
  const QuadraticBilevelSpec spec = random_quadratic_spec(10, 10, 2024);
  const QuadraticModel model(spec);
  RngStream ps = RngStream(8).child("x", 0);
  for (double lambda : {100.0, 1000.0}) {
    for (int i = 0; i < 5; ++i) {
      const Eigen::VectorXd x = sample_gaussian(ps, 10);
      const Eigen::VectorXd gap = model.y_star_penalty(x, lambda) - model.z_star(x);
      // probe-sharp Lipschitz value: the y-gradient of f at the lower minimizer
      const double l0f = (model.z_star(x) - spec.y_tgt).norm();
      REQUIRE(gap.norm() <= 2.0 * l0f / (model.lam_g() * lambda) + 1e-12);
    }
  }
}

TEST_CASE("run_penalty: empty run, query totals, warm-start flag") {
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 31));
  PenaltyConfig cfg;
  cfg.n_outer = 0;
  cfg.alpha = StepSchedule::constant(0.1);
  cfg.inner_beta = 0.05;
  cfg.inner_iters = 4;
  cfg.batch = 3;
  cfg.lambda = 10.0;
  cfg.eta = 0.01;
  cfg.mu = 0.01;
  const RunResult empty = run_penalty(problem, cfg, 5u);
  REQUIRE(empty.trace.records.size() == 1);

  cfg.n_outer = 3;
  const BilevelProblem p2 = make_quadratic(random_quadratic_spec(4, 4, 31));
  const RunResult r = run_penalty(p2, cfg, 5u);
  REQUIRE_FALSE(r.error.has_value());
  const QueryCount total = p2.counter->snapshot();
  REQUIRE(total.f_evals == 3 * (2 * 4 + 2 * 3));  // inner 2 t_k + outer 2 s_k
  REQUIRE(total.g_evals == 3 * (4 * 4 + 4 * 3));  // inner 4 t_k + outer 4 s_k

  cfg.warm_start = false;
  const BilevelProblem p3 = make_quadratic(random_quadratic_spec(4, 4, 31));
  const RunResult cold = run_penalty(p3, cfg, 5u);
  REQUIRE(cold.trace.records.back().hypergrad_norm !=
          r.trace.records.back().hypergrad_norm);
}

TEST_CASE("inner upper-difference point flag changes the run") {
  const BilevelProblem p1 = make_quadratic(random_quadratic_spec(4, 4, 31));
  const BilevelProblem p2 = make_quadratic(random_quadratic_spec(4, 4, 31));
  PenaltyConfig cfg;
  cfg.n_outer = 2;
  cfg.alpha = StepSchedule::constant(0.1);
  cfg.inner_beta = 0.05;
  cfg.inner_iters = 10;
  cfg.batch = 3;
  cfg.lambda = 10.0;
  cfg.eta = 0.01;
  cfg.mu = 0.01;
  cfg.inner_f_at_y = true;
  const RunResult at_y = run_penalty(p1, cfg, 5u);
  cfg.inner_f_at_y = false;
  const RunResult at_z = run_penalty(p2, cfg, 5u);
  REQUIRE(at_y.trace.records.back().hypergrad_norm !=
          at_z.trace.records.back().hypergrad_norm);
}

TEST_CASE("schedule plugs in the stated rates") {
  ProblemConstants consts;
  consts.l1psi = 2.0;
  consts.lam_g = 1.0;
  const PenaltyConfig cfg = penalty_schedule(10, 10, 0.01, consts);
  REQUIRE(cfg.lambda == Catch::Approx(10.0));  // 1/sqrt(eps)
  REQUIRE(cfg.batch == 1000);
  REQUIRE(cfg.inner_iters == 1000);
  REQUIRE(cfg.inner_beta == Catch::Approx(0.001));
  REQUIRE(cfg.mu == Catch::Approx(std::sqrt(0.01 / 1000.0)));
  REQUIRE(cfg.eta == Catch::Approx(std::sqrt(std::min(1.0 / (100.0 * 1000.0), 0.01 / 1000.0))));
  REQUIRE(cfg.alpha.at(0) == Catch::Approx(0.1));

  // threshold: lambda >= 4 l1f / lam_g when constants are known
  ProblemConstants tight;
  tight.l1f = 1.0;
  tight.lam_g = 0.5;
  tight.l1g = 1.0;
  const PenaltyConfig thr = penalty_schedule(10, 10, 0.04, tight);
  REQUIRE(thr.lambda == Catch::Approx(8.0));  // max(8, 5)

  // halving eps doubles s and t, scales lambda by sqrt(2)
  const PenaltyConfig a = penalty_schedule(10, 10, 0.02, consts);
  const PenaltyConfig b = penalty_schedule(10, 10, 0.01, consts);
  REQUIRE(b.batch == 2 * a.batch);
  REQUIRE(b.inner_iters == 2 * a.inner_iters);
  REQUIRE(b.lambda / a.lambda == Catch::Approx(std::sqrt(2.0)));

  // unknown l1psi falls back to the documented default step
  const PenaltyConfig blackbox = penalty_schedule(10, 10, 0.01, ProblemConstants{.lam_g = 1.0});
  REQUIRE(blackbox.alpha.at(0) == kPenaltyDefaultAlpha);
}

TEST_CASE("lambda below the known threshold is a configuration error") {
  ProblemConstants consts;
  consts.l1f = 2.0;
  consts.lam_g = 1.0;
  consts.l1g = 2.0;
  PenaltyConfig cfg;
  cfg.lambda = 1.0;  // threshold is 8
  cfg.eta = 0.01;
  cfg.mu = 0.01;
  cfg.alpha = StepSchedule::constant(0.1);
  REQUIRE_THROWS_AS(cfg.validate_against(consts), ConfigError);
}
