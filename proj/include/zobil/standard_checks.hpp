#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "zobil/smoothing.hpp"
#include "zobil/validation.hpp"

namespace zobil {

/// Fixed quadratic test function with every derivative available in closed
/// form; the standard target for estimator mean checks (Gaussian smoothing
/// leaves the derivatives of a quadratic unchanged).
struct QuadraticTestFunction {
  Eigen::MatrixXd hxx, hxy, hyy;
  Eigen::VectorXd gx0, gy0;
  double c0 = 0.0;

  static QuadraticTestFunction random(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
    RngStream root(seed);
    QuadraticTestFunction q;
    RngStream s = root.child("hxx", 0);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index j = 0; j < n; ++j) a.col(j) = sample_gaussian(s, n);
    q.hxx = 0.5 * (a + a.transpose());
    s = root.child("hxy", 0);
    q.hxy.resize(n, m);
    for (Eigen::Index j = 0; j < m; ++j) q.hxy.col(j) = sample_gaussian(s, n);
    s = root.child("hyy", 0);
    Eigen::MatrixXd b(m, m);
    for (Eigen::Index j = 0; j < m; ++j) b.col(j) = sample_gaussian(s, m);
    q.hyy = 0.5 * (b + b.transpose());
    s = root.child("g", 0);
    q.gx0 = sample_gaussian(s, n);
    q.gy0 = sample_gaussian(s, m);
    q.c0 = s.next_gaussian();
    return q;
  }

  double value(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return c0 + gx0.dot(x) + gy0.dot(y) + 0.5 * x.dot(hxx * x) + x.dot(hxy * y) +
           0.5 * y.dot(hyy * y);
  }

  Eigen::VectorXd grad_x(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return gx0 + hxx * x + hxy * y;
  }

  Eigen::VectorXd grad_y(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return gy0 + hxy.transpose() * x + hyy * y;
  }

  /// Lipschitz constant of the gradient: spectral norm of the full Hessian.
  double l1q() const {
    const Eigen::Index n = hxx.rows(), m = hyy.rows();
    Eigen::MatrixXd h(n + m, n + m);
    h.topLeftCorner(n, n) = hxx;
    h.topRightCorner(n, m) = hxy;
    h.bottomLeftCorner(m, n) = hxy.transpose();
    h.bottomRightCorner(m, m) = hyy;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }

  StochasticScalarOracle oracle(OracleKind kind,
                                std::shared_ptr<QueryCounter> counter = nullptr) const {
    return StochasticScalarOracle(
        [this](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream&) {
          return value(x, y);
        },
        kind, std::move(counter));
  }
};

namespace detail {

inline double rel_err(double measured, double scale) {
  return measured / std::max(scale, 1e-300);
}

}  // namespace detail

/// Exactness suite: forward differences are exact on affine functions and
/// central differences on quadratics, so every per-sample value must match
/// its algebraic closed form to near machine precision. Directions are
/// regenerated from the documented substream layout.
inline std::vector<CheckReport> exactness_checks() {
  std::vector<CheckReport> out;
  const Eigen::Index n = 5, m = 4;
  RngStream root(91);
  RngStream ps = root.child("points", 0);
  const Eigen::VectorXd x0 = sample_gaussian(ps, n);
  const Eigen::VectorXd y0 = sample_gaussian(ps, m);
  const Eigen::VectorXd a = sample_gaussian(ps, n);
  const Eigen::VectorXd b = sample_gaussian(ps, m);
  const double eta = 0.05, mu = 0.07;

  auto report = [&out](const std::string& name, double measured) {
    CheckReport r;
    r.name = name;
    r.measured = measured;
    r.reference = 1e-10;
    r.pass = measured <= r.reference;
    out.push_back(r);
  };

  // affine q: per-sample forward difference equals the directional derivative
  {
    StochasticScalarOracle q(
        [&a, &b](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream&) {
          return 1.25 + a.dot(x) + b.dot(y);
        },
        OracleKind::Upper, nullptr);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 16; ++i) {
      RngStream stream = root.child("affine_x", i);
      const GradEstimate est = zo_grad_x(q, x0, y0, eta, mu, 1, stream);
      RngStream dirs = stream.child(kSampleLabel, 0).child(kDirLabel, 0);
      const Eigen::VectorXd u = sample_gaussian(dirs, n);
      const Eigen::VectorXd v = sample_gaussian(dirs, m);
      const Eigen::VectorXd expected = (a.dot(u) + (mu / eta) * b.dot(v)) * u;
      worst = std::max(worst, detail::rel_err((est.value - expected).norm(), expected.norm()));
    }
    report("exactness/zo_grad_x_affine_forward", worst);

    double worst_y = 0.0;
    for (std::uint64_t i = 0; i < 16; ++i) {
      RngStream stream = root.child("affine_y", i);
      const GradEstimate est = zo_grad_y(q, x0, y0, 0.0, mu, 1, stream);
      RngStream dirs = stream.child(kSampleLabel, 0).child(kDirLabel, 0);
      const Eigen::VectorXd v = sample_gaussian(dirs, m);
      const Eigen::VectorXd expected = b.dot(v) * v;
      worst_y = std::max(worst_y, detail::rel_err((est.value - expected).norm(), expected.norm()));
    }
    report("exactness/zo_grad_y_affine_forward", worst_y);
  }

  // bilinear q = x^T A y: the central difference equals u^T A v for any radii
  {
    RngStream as = root.child("A", 0);
    Eigen::MatrixXd A(n, m);
    for (Eigen::Index j = 0; j < m; ++j) A.col(j) = sample_gaussian(as, n);
    StochasticScalarOracle q(
        [&A](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream&) {
          return x.dot(A * y);
        },
        OracleKind::Lower, nullptr);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 16; ++i) {
      RngStream stream = root.child("bilinear", i);
      const HessEstimate est = zo_hess_xy(q, x0, y0, eta, mu, 1, stream);
      RngStream dirs = stream.child(kSampleLabel, 0).child(kDirLabel, 0);
      const Eigen::VectorXd u = sample_gaussian(dirs, n);
      const Eigen::VectorXd v = sample_gaussian(dirs, m);
      const Eigen::MatrixXd expected = (u.dot(A * v)) * (u * v.transpose());
      worst = std::max(worst, detail::rel_err((est.value - expected).norm(), expected.norm()));
    }
    report("exactness/zo_hess_xy_bilinear_central", worst);
  }

  // pure x-quadratic: central difference equals u^T H u / 2
  {
    RngStream hs = root.child("H", 0);
    Eigen::MatrixXd Hraw(n, n);
    for (Eigen::Index j = 0; j < n; ++j) Hraw.col(j) = sample_gaussian(hs, n);
    const Eigen::MatrixXd H = 0.5 * (Hraw + Hraw.transpose());
    StochasticScalarOracle q(
        [&H](const Eigen::VectorXd& x, const Eigen::VectorXd&, RngStream&) {
          return 0.5 * x.dot(H * x);
        },
        OracleKind::Lower, nullptr);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 16; ++i) {
      RngStream stream = root.child("xquad", i);
      const HessEstimate est = zo_hess_xx(q, x0, y0, eta, 0.0, 1, stream);
      RngStream dirs = stream.child(kSampleLabel, 0).child(kDirLabel, 0);
      const Eigen::VectorXd u = sample_gaussian(dirs, n);
      const double scalar = 0.5 * u.dot(H * u);
      Eigen::MatrixXd expected = scalar * (u * u.transpose());
      expected.diagonal().array() -= scalar;
      worst = std::max(worst, detail::rel_err((est.value - expected).norm(), expected.norm()));
    }
    report("exactness/zo_hess_xx_quadratic_central", worst);
  }

  // pure y-quadratic: matrix-free application vs the dense computation
  {
    RngStream bs = root.child("B", 0);
    Eigen::MatrixXd Braw(m, m);
    for (Eigen::Index j = 0; j < m; ++j) Braw.col(j) = sample_gaussian(bs, m);
    const Eigen::MatrixXd B = 0.5 * (Braw + Braw.transpose());
    StochasticScalarOracle q(
        [&B](const Eigen::VectorXd&, const Eigen::VectorXd& y, RngStream&) {
          return 0.5 * y.dot(B * y);
        },
        OracleKind::Lower, nullptr);
    RngStream zs = root.child("z", 0);
    const Eigen::VectorXd z = sample_gaussian(zs, m);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 16; ++i) {
      RngStream stream = root.child("yquad", i);
      const ApplyEstimate est = zo_hess_yy_apply(q, x0, y0, 0.0, mu, z, stream);
      RngStream dirs = stream.child(kSampleLabel, 0).child(kDirLabel, 0);
      const Eigen::VectorXd v = sample_gaussian(dirs, m);
      const double scalar = 0.5 * v.dot(B * v);
      Eigen::MatrixXd dense = scalar * (v * v.transpose());
      dense.diagonal().array() -= scalar;
      const Eigen::VectorXd expected = dense * z;
      worst = std::max(worst, detail::rel_err((est.value - expected).norm(), expected.norm()));
    }
    report("exactness/zo_hess_yy_apply_matrix_free", worst);
  }
  return out;
}

/// Monte-Carlo unbiasedness and closed-form second/fourth-moment audits for
/// all five estimators on a fixed quadratic (n = m = 4). `samples` defaults
/// to the full statistical gate size.
inline std::vector<CheckReport> estimator_moment_checks(std::int64_t samples = 100000,
                                                        double z_gate = 5.0) {
  std::vector<CheckReport> out;
  const Eigen::Index n = 4, m = 4;
  const QuadraticTestFunction q = QuadraticTestFunction::random(n, m, 7);
  const StochasticScalarOracle oracle = q.oracle(OracleKind::Lower);
  RngStream root(2024);
  RngStream ps = root.child("probe", 0);
  const Eigen::VectorXd x0 = sample_gaussian(ps, n);
  const Eigen::VectorXd y0 = sample_gaussian(ps, m);
  const Eigen::VectorXd theta = sample_gaussian(ps, m);
  const Eigen::VectorXd theta_x = sample_gaussian(ps, n);
  const double eta = 1e-2, mu = 1e-2;

  BoundInputs common;
  common.n = n;
  common.m = m;
  common.eta = eta;
  common.mu = mu;
  common.batch = 1;
  common.l1q = q.l1q();
  common.l2q = 0.0;  // quadratic: the Hessian is constant
  common.grad_x_norm2 = q.grad_x(x0, y0).squaredNorm();
  common.grad_y_norm2 = q.grad_y(x0, y0).squaredNorm();
  common.hess_xx_fro2 = q.hxx.squaredNorm();
  common.hess_xy_fro2 = q.hxy.squaredNorm();
  common.hess_yy_fro2 = q.hyy.squaredNorm();

  // grad_x
  {
    RngStream s = root.child("grad_x", 0);
    McMeanResult r = mc_mean_check(
        [&](std::int64_t rep) {
          return zo_grad_x(oracle, x0, y0, eta, mu, 1, s.child("rep", rep)).value;
        },
        q.grad_x(x0, y0), samples, z_gate, "mc/grad_x_mean");
    out.push_back(r.report);
    out.push_back(bound_audit_grad(common, r.second_moment, 0.2, "bound/grad_x_second_moment"));
    double fourth = 0.0;
    RngStream s4 = root.child("grad_x4", 0);
    for (std::int64_t rep = 0; rep < samples; ++rep) {
      const double n2 =
          zo_grad_x(oracle, x0, y0, eta, mu, 1, s4.child("rep", rep)).value.squaredNorm();
      fourth += n2 * n2;
    }
    fourth /= static_cast<double>(samples);
    out.push_back(audit_bound("bound/grad_x_fourth_moment", fourth,
                              grad_x_fourth_moment_bound(common)));
  }
  // grad_y
  {
    RngStream s = root.child("grad_y", 0);
    McMeanResult r = mc_mean_check(
        [&](std::int64_t rep) {
          return zo_grad_y(oracle, x0, y0, eta, mu, 1, s.child("rep", rep)).value;
        },
        q.grad_y(x0, y0), samples, z_gate, "mc/grad_y_mean");
    out.push_back(r.report);
    out.push_back(audit_bound("bound/grad_y_second_moment", r.second_moment,
                              grad_y_second_moment_bound(common)));
  }
  // hess_xy: matrix mean, then theta-applied second moment
  {
    RngStream s = root.child("hess_xy", 0);
    Eigen::VectorXd target_mat(n * m);
    Eigen::Map<Eigen::MatrixXd>(target_mat.data(), n, m) = q.hxy;
    McMeanResult r = mc_mean_check(
        [&](std::int64_t rep) {
          const HessEstimate e = zo_hess_xy(oracle, x0, y0, eta, mu, 1, s.child("rep", rep));
          Eigen::VectorXd flat(n * m);
          Eigen::Map<Eigen::MatrixXd>(flat.data(), n, m) = e.value;
          return flat;
        },
        target_mat, samples, z_gate, "mc/hess_xy_mean");
    out.push_back(r.report);
    RngStream sa = root.child("hess_xy_apply", 0);
    McMeanResult ra = mc_mean_check(
        [&](std::int64_t rep) {
          return Eigen::VectorXd(
              zo_hess_xy(oracle, x0, y0, eta, mu, 1, sa.child("rep", rep)).value * theta);
        },
        q.hxy * theta, samples, z_gate, "mc/hess_xy_apply_mean");
    out.push_back(ra.report);
    BoundInputs bi = common;
    bi.theta_norm2 = theta.squaredNorm();
    out.push_back(audit_bound("bound/hess_xy_apply_second_moment", ra.second_moment,
                              hess_xy_apply_second_moment_bound(bi)));
  }
  // hess_xx
  {
    RngStream s = root.child("hess_xx", 0);
    McMeanResult r = mc_mean_check(
        [&](std::int64_t rep) {
          return Eigen::VectorXd(
              zo_hess_xx(oracle, x0, y0, eta, mu, 1, s.child("rep", rep)).value * theta_x);
        },
        q.hxx * theta_x, samples, z_gate, "mc/hess_xx_apply_mean");
    out.push_back(r.report);
    BoundInputs bi = common;
    bi.theta_norm2 = theta_x.squaredNorm();
    out.push_back(audit_bound("bound/hess_xx_apply_second_moment", r.second_moment,
                              hess_xx_apply_second_moment_bound(bi)));
  }
  // hess_yy_apply
  {
    RngStream s = root.child("hess_yy", 0);
    McMeanResult r = mc_mean_check(
        [&](std::int64_t rep) {
          return zo_hess_yy_apply(oracle, x0, y0, eta, mu, theta, s.child("rep", rep)).value;
        },
        q.hyy * theta, samples, z_gate, "mc/hess_yy_apply_mean");
    out.push_back(r.report);
    BoundInputs bi = common;
    bi.theta_norm2 = theta.squaredNorm();
    out.push_back(audit_bound("bound/hess_yy_apply_second_moment", r.second_moment,
                              hess_yy_apply_second_moment_bound(bi)));
  }
  return out;
}

/// Smoothed-minimizer gap on a random 6x6 quadratic instance.
inline std::vector<CheckReport> smoothed_gap_checks() {
  std::vector<CheckReport> out;
  const QuadraticModel model(random_quadratic_spec(6, 6, 11));
  RngStream root(12);
  RngStream ps = root.child("probes", 0);
  std::vector<Eigen::VectorXd> probes;
  for (int i = 0; i < 3; ++i) probes.push_back(sample_gaussian(ps, 6));
  const SmoothingParams params = SmoothingParams::uniform(0.1, 0.1);
  const SmoothedGapReport rep = smoothed_gap_check(model, params, probes);
  CheckReport r;
  r.name = "gap/smoothed_minimizer";
  r.measured = std::max(rep.gap_deterministic, rep.gap_stochastic);
  r.reference = std::min(1e-6, rep.bound + 1e-6);
  r.pass = rep.pass;
  out.push_back(r);
  return out;
}

/// The full battery behind the `validate` CLI subcommand; every [DERIVED]
/// estimator claim has its check here, sized to run in seconds.
inline std::vector<CheckReport> run_standard_validation(std::int64_t samples = 100000) {
  std::vector<CheckReport> out;
  for (auto& r : exactness_checks()) out.push_back(std::move(r));
  for (auto& r : estimator_moment_checks(samples)) out.push_back(std::move(r));
  for (auto& r : smoothed_gap_checks()) out.push_back(std::move(r));
  return out;
}

}  // namespace zobil
