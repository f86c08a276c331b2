#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "zobil/problems.hpp"
#include "zobil/validation.hpp"

using namespace zobil;

TEST_CASE("decoupled quadratic: zero coupling means y* = 0 and hypergrad = rho x") {
  QuadraticBilevelSpec spec;
  spec.B = Eigen::MatrixXd::Identity(4, 4);
  spec.C = Eigen::MatrixXd::Zero(4, 3);
  spec.y_tgt = Eigen::VectorXd::Zero(4);
  spec.rho = 2.0;
  const QuadraticModel model(spec);
  RngStream s = RngStream(1).child("x", 0);
  for (int i = 0; i < 3; ++i) {
    const Eigen::VectorXd x = sample_gaussian(s, 3);
    REQUIRE(model.y_star(x).norm() == 0.0);
    REQUIRE((model.hypergrad(x) - 2.0 * x).norm() <= 1e-14);
  }
}

TEST_CASE("identity quadratic: hypergrad(x) = x, minimized at zero") {
  QuadraticBilevelSpec spec;
  spec.B = Eigen::MatrixXd::Identity(4, 4);
  spec.C = Eigen::MatrixXd::Identity(4, 4);
  spec.y_tgt = Eigen::VectorXd::Zero(4);
  spec.rho = 0.0;
  const QuadraticModel model(spec);
  RngStream s = RngStream(2).child("x", 0);
  for (int i = 0; i < 3; ++i) {
    const Eigen::VectorXd x = sample_gaussian(s, 4);
    REQUIRE((model.hypergrad(x) - x).norm() <= 1e-12 * (1.0 + x.norm()));
    const Eigen::VectorXd fd =
        fd_grad([&model](const Eigen::VectorXd& p) { return model.psi(p); }, x, 1e-5);
    REQUIRE((model.hypergrad(x) - fd).norm() <= 1e-5 * (1.0 + fd.norm()));
  }
  REQUIRE(model.psi(Eigen::VectorXd::Zero(4)) == 0.0);
}

TEST_CASE("random quadratic: analytic hypergrad matches finite differences") {
  const QuadraticBilevelSpec spec = random_quadratic_spec(6, 5, 77);
  const QuadraticModel model(spec);
  RngStream s = RngStream(3).child("x", 0);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd x = sample_gaussian(s, 6);
    const Eigen::VectorXd fd =
        fd_grad([&model](const Eigen::VectorXd& p) { return model.psi(p); }, x, 1e-5);
    const Eigen::VectorXd hg = model.hypergrad(x);
    REQUIRE((hg - fd).norm() <= 1e-4 * (1.0 + fd.norm()));
  }
}

TEST_CASE("inner stationarity of the analytic minimizer") {
  const QuadraticBilevelSpec spec = random_quadratic_spec(5, 7, 99);
  const QuadraticModel model(spec);
  RngStream s = RngStream(4).child("x", 0);
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd x = sample_gaussian(s, 5);
    const Eigen::VectorXd ys = model.y_star(x);
    const Eigen::VectorXd grad_y = spec.B * ys - spec.C * x;
    REQUIRE(grad_y.norm() <= 1e-8);
  }
}

TEST_CASE("non-positive-definite B is rejected") {
  QuadraticBilevelSpec spec;
  spec.B = -Eigen::MatrixXd::Identity(3, 3);
  spec.C = Eigen::MatrixXd::Zero(3, 2);
  spec.y_tgt = Eigen::VectorXd::Zero(3);
  REQUIRE_THROWS_AS(QuadraticModel(spec), InvalidParameterError);
  spec.B = Eigen::MatrixXd::Identity(3, 3);
  spec.B(0, 1) = 0.5;  // not symmetric
  REQUIRE_THROWS_AS(QuadraticModel(spec), InvalidParameterError);
}

TEST_CASE("oracle noise is unbiased and the counter tallies every call") {
  QuadraticBilevelSpec spec = random_quadratic_spec(4, 4, 5);
  spec.noise_sigma_f = 0.3;
  const BilevelProblem problem = make_quadratic(spec);
  const QuadraticModel model(spec);
  RngStream ps = RngStream(6).child("pt", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 4);
  const Eigen::VectorXd y = sample_gaussian(ps, 4);
  const double truth = model.f(x, y);
  const std::int64_t M = 100000;
  RngStream ns = RngStream(6).child("noise", 0);
  double sum = 0.0, sumsq = 0.0;
  for (std::int64_t i = 0; i < M; ++i) {
    const double v = problem.F(x, y, ns.child("draw", i));
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / static_cast<double>(M);
  const double sd = std::sqrt(std::max(sumsq / M - mean * mean, 0.0));
  REQUIRE(std::abs(mean - truth) <= 5.0 * sd / std::sqrt(static_cast<double>(M)));
  REQUIRE(problem.counter->snapshot().f_evals == M);
  REQUIRE(problem.counter->snapshot().g_evals == 0);
}

TEST_CASE("analytic accessors never touch the query counter") {
  const BilevelProblem problem = make_quadratic(random_quadratic_spec(4, 4, 5));
  RngStream ps = RngStream(8).child("pt", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 4);
  (void)true_hypergrad(problem, x);
  (void)problem.analytic->y_star(x);
  (void)problem.analytic->psi(x);
  REQUIRE(problem.counter->snapshot().total() == 0);
}

TEST_CASE("true_hypergrad requires an analytic record") {
  BilevelProblem bare;
  bare.n = 2;
  bare.m = 2;
  REQUIRE_THROWS_AS(true_hypergrad(bare, Eigen::VectorXd::Zero(2)), UnsupportedOperationError);
}

TEST_CASE("penalty minimizers satisfy their stationarity conditions") {
  const QuadraticBilevelSpec spec = random_quadratic_spec(5, 5, 21);
  const QuadraticModel model(spec);
  RngStream ps = RngStream(9).child("x", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 5);
  const double lambda = 50.0;
  const Eigen::VectorXd yl = model.y_star_penalty(x, lambda);
  // grad of f/lambda + g at y_lambda vanishes
  const Eigen::VectorXd grad = (yl - spec.y_tgt) / lambda + spec.B * yl - spec.C * x;
  REQUIRE(grad.norm() <= 1e-10);
}

TEST_CASE("hyper-rep with realizable data: planted point is near-stationary") {
  // responses generated from a planted (x0, y0); with gamma tiny, y*(x0)
  // recovers y0 and the hypergradient at x0 is ridge-sized
  const HyperRepSpec spec = make_hyper_rep_data(4, 6, 60, 60, 1e-6, 5, 31);
  const HyperRepModel model(spec);
  RngStream root(31);
  RngStream ps = root.child("planted", 0);
  const Eigen::VectorXd x0 = sample_gaussian(ps, 4 * 6);
  const Eigen::VectorXd y0 = sample_gaussian(ps, 6);
  const Eigen::VectorXd ystar = model.y_star(x0);
  REQUIRE((ystar - y0).norm() <= 1e-3 * (1.0 + y0.norm()));
  const Eigen::VectorXd hg = model.hypergrad_fd(x0);
  REQUIRE(hg.norm() <= 1e-6 * (x0.norm() + 10.0) + 1e-3);
}

TEST_CASE("full-batch stochastic oracle equals the deterministic loss") {
  HyperRepSpec spec = make_hyper_rep_data(3, 4, 20, 20, 1e-4, 5, 17);
  spec.minibatch_rows = 20;  // full batch: zero subsampling variance
  const BilevelProblem problem = make_hyper_rep(spec);
  const HyperRepModel model(spec);
  RngStream ps = RngStream(18).child("pt", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 12);
  const Eigen::VectorXd y = sample_gaussian(ps, 4);
  const double g1 = problem.G(x, y, RngStream(1).child("n", 0));
  const double g2 = problem.G(x, y, RngStream(2).child("n", 1));
  REQUIRE(g1 == g2);
  REQUIRE(g1 == Catch::Approx(model.g_full(x, y)).epsilon(1e-12));
}

TEST_CASE("ridge-dominant limit: hypergrad approaches gamma x") {
  const HyperRepSpec spec = make_hyper_rep_data(3, 4, 30, 30, 1e3, 3, 23);
  const HyperRepModel model(spec);
  RngStream ps = RngStream(24).child("x", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 12);
  REQUIRE(model.y_star(x).norm() <= 1e-2);
  const Eigen::VectorXd hg = model.hypergrad_fd(x, 1e-6);
  REQUIRE((hg - 1e3 * x).norm() <= 0.01 * (1e3 * x).norm());
}

TEST_CASE("hyper-rep spec validation") {
  HyperRepSpec spec = make_hyper_rep_data(3, 4, 20, 20, 1e-4, 5, 17);
  spec.minibatch_rows = 21;  // more rows than the data has
  REQUIRE_THROWS_AS(make_hyper_rep(spec), InvalidParameterError);
  spec.minibatch_rows = 5;
  spec.gamma = 0.0;
  REQUIRE_THROWS_AS(make_hyper_rep(spec), InvalidParameterError);
}

TEST_CASE("subsampling oracle is unbiased for the full loss") {
  const HyperRepSpec spec = make_hyper_rep_data(3, 4, 25, 25, 1e-4, 5, 40, 0.1);
  const BilevelProblem problem = make_hyper_rep(spec);
  const HyperRepModel model(spec);
  RngStream ps = RngStream(41).child("pt", 0);
  const Eigen::VectorXd x = sample_gaussian(ps, 12);
  const Eigen::VectorXd y = sample_gaussian(ps, 4);
  const double truth = model.g_full(x, y);
  const std::int64_t M = 50000;
  RngStream ns = RngStream(42).child("noise", 0);
  double sum = 0.0, sumsq = 0.0;
  for (std::int64_t i = 0; i < M; ++i) {
    const double v = problem.G(x, y, ns.child("draw", i));
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / static_cast<double>(M);
  const double sd = std::sqrt(std::max(sumsq / M - mean * mean, 0.0));
  REQUIRE(std::abs(mean - truth) <= 5.0 * std::max(sd, 1e-12) / std::sqrt(static_cast<double>(M)));
}

TEST_CASE("hyper-rep query scale records the minibatch size") {
  const HyperRepSpec spec = make_hyper_rep_data(3, 4, 20, 20, 1e-4, 5, 17);
  REQUIRE(make_hyper_rep(spec).query_scale == 5);
  REQUIRE(make_quadratic(random_quadratic_spec(3, 3, 1)).query_scale == 1);
}
