#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "zobil/oracle.hpp"
#include "zobil/rng.hpp"
#include "zobil/types.hpp"

namespace zobil {

/// Closed-form (or high-accuracy deterministic) ground truth attached to a
/// problem instance. None of these touch the query counter.
struct AnalyticRecord {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> y_star;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> hypergrad;
  std::function<double(const Eigen::VectorXd&)> psi;
};

/// A stochastic bilevel instance: noisy value oracles for the upper (F) and
/// lower (G) objectives sharing one query counter, plus optional analytic
/// ground truth and smoothness constants. `query_scale` converts raw call
/// counts into scaled queries (the minibatch row count for subsampling
/// oracles, 1 otherwise).
struct BilevelProblem {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  StochasticScalarOracle F;
  StochasticScalarOracle G;
  std::shared_ptr<QueryCounter> counter;
  std::optional<AnalyticRecord> analytic;
  std::optional<ProblemConstants> constants;
  std::int64_t query_scale = 1;
};

/// Evaluates the analytic hypergradient; query-neutral by construction.
inline Eigen::VectorXd true_hypergrad(const BilevelProblem& problem, const Eigen::VectorXd& x) {
  if (!problem.analytic || !problem.analytic->hypergrad)
    throw UnsupportedOperationError("true_hypergrad: problem has no analytic record");
  return problem.analytic->hypergrad(x);
}

// ---------------------------------------------------------------------------
// Quadratic bilevel instance
// ---------------------------------------------------------------------------

/// g(x, y) = y^T B y / 2 - y^T C x,   f(x, y) = ||y - y_tgt||^2 / 2 + rho/2 ||x||^2.
/// The stochastic oracles add zero-mean Gaussian value noise of the given
/// standard deviations.
struct QuadraticBilevelSpec {
  Eigen::MatrixXd B;      // m x m symmetric positive definite
  Eigen::MatrixXd C;      // m x n coupling
  Eigen::VectorXd y_tgt;  // length m
  double rho = 1.0;       // upper-level ridge weight
  double noise_sigma_f = 0.0;
  double noise_sigma_g = 0.0;
};

/// Deterministic core of a quadratic instance. Exposes every closed form the
/// tests need, including the penalty-reformulation minimizers:
///   y_star(x)              = B^{-1} C x
///   psi(x)                 = f(x, y_star(x))
///   hypergrad(x)           = rho x + C^T B^{-1} (y_star(x) - y_tgt)
///   y_star_penalty(x, lam) = argmin_y f(x,y)/lam + g(x,y)
///   surrogate_grad(x, lam) = grad_x f(x, y_lam) + lam (grad_x g(x, y_lam) - grad_x g(x, z*)).
class QuadraticModel {
 public:
  explicit QuadraticModel(QuadraticBilevelSpec spec) : spec_(std::move(spec)) {
    const Eigen::Index m = spec_.B.rows();
    const Eigen::Index n = spec_.C.cols();
    if (m < 1 || n < 1 || spec_.B.cols() != m || spec_.C.rows() != m ||
        spec_.y_tgt.size() != m)
      throw InvalidParameterError("QuadraticModel: inconsistent dimensions");
    if (!spec_.B.isApprox(spec_.B.transpose(), 1e-12))
      throw InvalidParameterError("QuadraticModel: B must be symmetric");
    if (!(spec_.rho >= 0.0) || spec_.noise_sigma_f < 0.0 || spec_.noise_sigma_g < 0.0)
      throw InvalidParameterError("QuadraticModel: negative weight or noise sigma");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec_.B);
    lam_g_ = es.eigenvalues().minCoeff();
    b_max_ = es.eigenvalues().maxCoeff();
    if (!(lam_g_ > 0.0))
      throw InvalidParameterError("QuadraticModel: B must be positive definite");
    llt_.compute(spec_.B);
  }

  Eigen::Index n() const { return spec_.C.cols(); }
  Eigen::Index m() const { return spec_.B.rows(); }
  const QuadraticBilevelSpec& spec() const { return spec_; }
  double lam_g() const { return lam_g_; }

  double f(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return 0.5 * (y - spec_.y_tgt).squaredNorm() + 0.5 * spec_.rho * x.squaredNorm();
  }

  double g(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return 0.5 * y.dot(spec_.B * y) - y.dot(spec_.C * x);
  }

  Eigen::VectorXd y_star(const Eigen::VectorXd& x) const { return llt_.solve(spec_.C * x); }

  double psi(const Eigen::VectorXd& x) const { return f(x, y_star(x)); }

  Eigen::VectorXd hypergrad(const Eigen::VectorXd& x) const {
    return spec_.rho * x + spec_.C.transpose() * llt_.solve(y_star(x) - spec_.y_tgt);
  }

  /// argmin_y f(x,y)/lambda + g(x,y):  (B + I/lambda) y = C x + y_tgt/lambda.
  Eigen::VectorXd y_star_penalty(const Eigen::VectorXd& x, double lambda) const {
    if (!(lambda > 0.0)) throw InvalidParameterError("y_star_penalty: lambda must be > 0");
    Eigen::MatrixXd A = spec_.B;
    A.diagonal().array() += 1.0 / lambda;
    return A.llt().solve(spec_.C * x + spec_.y_tgt / lambda);
  }

  Eigen::VectorXd z_star(const Eigen::VectorXd& x) const { return y_star(x); }

  /// Exact gradient of the penalty surrogate at penalty weight lambda.
  /// grad_x f = rho x and grad_x g(x, y) = -C^T y, so this is
  /// rho x + lambda C^T (z_star - y_star_penalty).
  Eigen::VectorXd surrogate_grad(const Eigen::VectorXd& x, double lambda) const {
    return spec_.rho * x +
           lambda * (spec_.C.transpose() * (z_star(x) - y_star_penalty(x, lambda)));
  }

  /// Constants on the reference region { ||x|| <= radius, y between the exact
  /// inner minimizers }; the quadratic f has no global Lipschitz constant.
  ProblemConstants constants(double reference_radius = 10.0) const {
    ProblemConstants c;
    const Eigen::Index nn = n(), mm = m();
    c.lam_g = lam_g_;
    c.l1f = std::max(spec_.rho, 1.0);
    c.l2g = 0.0;
    // grad g has the constant Jacobian [[0, -C^T], [-C, B]].
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(nn + mm, nn + mm);
    J.topRightCorner(nn, mm) = -spec_.C.transpose();
    J.bottomLeftCorner(mm, nn) = -spec_.C;
    J.bottomRightCorner(mm, mm) = spec_.B;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esj(J);
    c.l1g = esj.eigenvalues().cwiseAbs().maxCoeff();
    // hypergrad is linear: rho I + C^T B^{-2} C.
    const Eigen::MatrixXd BinvC = llt_.solve(spec_.C);
    Eigen::MatrixXd H = BinvC.transpose() * BinvC;
    H.diagonal().array() += spec_.rho;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esh(H);
    c.l1psi = esh.eigenvalues().cwiseAbs().maxCoeff();
    const double y_span = BinvC.norm() * reference_radius + spec_.y_tgt.norm();
    c.l0f = std::hypot(spec_.rho * reference_radius, y_span);
    c.sig1f2 = 0.0;  // additive value noise leaves derivatives exact
    c.sig1g2 = 0.0;
    c.sig2g2 = 0.0;
    return c;
  }

 private:
  QuadraticBilevelSpec spec_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double lam_g_ = 0.0;
  double b_max_ = 0.0;
};

/// Builds the stochastic bilevel instance around a quadratic model.
inline BilevelProblem make_quadratic(const QuadraticBilevelSpec& spec) {
  auto model = std::make_shared<QuadraticModel>(spec);
  auto counter = std::make_shared<QueryCounter>();
  const double sf = spec.noise_sigma_f;
  const double sg = spec.noise_sigma_g;

  BilevelProblem p;
  p.n = model->n();
  p.m = model->m();
  p.counter = counter;
  p.F = StochasticScalarOracle(
      [model, sf](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream& noise) {
        double v = model->f(x, y);
        if (sf > 0.0) v += sf * noise.next_gaussian();
        return v;
      },
      OracleKind::Upper, counter);
  p.G = StochasticScalarOracle(
      [model, sg](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream& noise) {
        double v = model->g(x, y);
        if (sg > 0.0) v += sg * noise.next_gaussian();
        return v;
      },
      OracleKind::Lower, counter);
  p.analytic = AnalyticRecord{
      [model](const Eigen::VectorXd& x) { return model->y_star(x); },
      [model](const Eigen::VectorXd& x) { return model->hypergrad(x); },
      [model](const Eigen::VectorXd& x) { return model->psi(x); }};
  p.constants = model->constants();
  p.query_scale = 1;
  return p;
}

/// Options for the seeded quadratic instance generator.
struct QuadraticGenOptions {
  double spectrum_min = 1.0;  // eigenvalue range of B
  double spectrum_max = 2.0;
  double coupling = 0.5;      // spectral-norm scale of C
  double y_tgt_scale = 1.0;
  double rho = 1.0;
  double noise_sigma_f = 0.0;
  double noise_sigma_g = 0.0;
};

/// Random instance with B = Q diag(spectrum) Q^T (Q from a QR factorization
/// of a Gaussian matrix), C Gaussian rescaled to the requested spectral norm.
inline QuadraticBilevelSpec random_quadratic_spec(Eigen::Index n, Eigen::Index m,
                                                  std::uint64_t data_seed,
                                                  const QuadraticGenOptions& opt = {}) {
  if (n < 1 || m < 1) throw InvalidParameterError("random_quadratic_spec: dims must be >= 1");
  if (!(opt.spectrum_min > 0.0) || opt.spectrum_max < opt.spectrum_min)
    throw InvalidParameterError("random_quadratic_spec: bad spectrum range");
  RngStream root(data_seed);
  RngStream bs = root.child("B", 0);
  Eigen::MatrixXd Graw(m, m);
  for (Eigen::Index j = 0; j < m; ++j) Graw.col(j) = sample_gaussian(bs, m);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(Graw).householderQ();
  Eigen::VectorXd eigs(m);
  for (Eigen::Index i = 0; i < m; ++i)
    eigs[i] = (m == 1) ? opt.spectrum_min
                       : opt.spectrum_min + (opt.spectrum_max - opt.spectrum_min) *
                                                static_cast<double>(i) /
                                                static_cast<double>(m - 1);
  QuadraticBilevelSpec spec;
  spec.B = Q * eigs.asDiagonal() * Q.transpose();
  spec.B = 0.5 * (spec.B + spec.B.transpose().eval());  // exact symmetry
  RngStream cs = root.child("C", 0);
  Eigen::MatrixXd C(m, n);
  for (Eigen::Index j = 0; j < n; ++j) C.col(j) = sample_gaussian(cs, m);
  const double cnorm = C.jacobiSvd().singularValues()(0);
  if (cnorm > 0.0 && opt.coupling > 0.0)
    C *= opt.coupling / cnorm;
  else
    C.setZero();
  spec.C = C;
  RngStream ts = root.child("y_tgt", 0);
  spec.y_tgt = opt.y_tgt_scale * sample_gaussian(ts, m);
  spec.rho = opt.rho;
  spec.noise_sigma_f = opt.noise_sigma_f;
  spec.noise_sigma_g = opt.noise_sigma_g;
  return spec;
}

// ---------------------------------------------------------------------------
// Hyper-representation instance
// ---------------------------------------------------------------------------

/// Feature-learning bilevel task. The feature map is the two-layer network
/// T(chi; x) = tanh(chi * X) with X = reshape(x, d_in x d_out) column-major:
///   f(x, y) = ||T(chi1; x) y - b1||^2 / (2 n1) + gamma/2 ||x||^2
///   g(x, y) = ||T(chi2; x) y - b2||^2 / (2 n2) + gamma/2 ||y||^2.
/// Stochastic oracles evaluate the loss over a uniformly random subset of
/// `minibatch_rows` rows; one oracle call counts one query, and the harness
/// reports scaled queries = calls * minibatch_rows.
struct HyperRepSpec {
  Eigen::Index d_in = 0;
  Eigen::Index d_out = 0;
  Eigen::Index n1 = 0;
  Eigen::Index n2 = 0;
  double gamma = 1e-6;
  Eigen::Index minibatch_rows = 1;
  Eigen::MatrixXd chi1;  // n1 x d_in
  Eigen::MatrixXd chi2;  // n2 x d_in
  Eigen::VectorXd b1;    // length n1
  Eigen::VectorXd b2;    // length n2

  void validate() const {
    if (d_in < 1 || d_out < 1 || n1 < 1 || n2 < 1)
      throw InvalidParameterError("HyperRepSpec: dimensions must be >= 1");
    if (!(gamma > 0.0)) throw InvalidParameterError("HyperRepSpec: gamma must be > 0");
    if (minibatch_rows < 1 || minibatch_rows > std::min(n1, n2))
      throw InvalidParameterError("HyperRepSpec: minibatch_rows must lie in [1, min(n1, n2)]");
    if (chi1.rows() != n1 || chi1.cols() != d_in || chi2.rows() != n2 || chi2.cols() != d_in ||
        b1.size() != n1 || b2.size() != n2)
      throw InvalidParameterError("HyperRepSpec: data shapes do not match the dimensions");
  }
};

class HyperRepModel {
 public:
  explicit HyperRepModel(HyperRepSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const HyperRepSpec& spec() const { return spec_; }
  Eigen::Index n() const { return spec_.d_in * spec_.d_out; }
  Eigen::Index m() const { return spec_.d_out; }

  Eigen::Map<const Eigen::MatrixXd> weights(const Eigen::VectorXd& x) const {
    return {x.data(), spec_.d_in, spec_.d_out};
  }

  Eigen::MatrixXd features(const Eigen::MatrixXd& chi, const Eigen::VectorXd& x) const {
    return (chi * weights(x)).array().tanh().matrix();
  }

  double f_full(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    const Eigen::VectorXd r = features(spec_.chi1, x) * y - spec_.b1;
    return 0.5 * r.squaredNorm() / static_cast<double>(spec_.n1) +
           0.5 * spec_.gamma * x.squaredNorm();
  }

  double g_full(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    const Eigen::VectorXd r = features(spec_.chi2, x) * y - spec_.b2;
    return 0.5 * r.squaredNorm() / static_cast<double>(spec_.n2) +
           0.5 * spec_.gamma * y.squaredNorm();
  }

  /// Ridge normal equations of the lower problem (closed form given the full
  /// feature matrix): (T^T T / n2 + gamma I) y = T^T b2 / n2.
  Eigen::VectorXd y_star(const Eigen::VectorXd& x) const {
    const Eigen::MatrixXd T = features(spec_.chi2, x);
    const double n2 = static_cast<double>(spec_.n2);
    Eigen::MatrixXd A = T.transpose() * T / n2;
    A.diagonal().array() += spec_.gamma;
    return A.llt().solve(T.transpose() * spec_.b2 / n2);
  }

  double psi(const Eigen::VectorXd& x) const { return f_full(x, y_star(x)); }

  /// Central finite differences of the deterministic psi; accurate enough for
  /// convergence plots at desk scale.
  Eigen::VectorXd hypergrad_fd(const Eigen::VectorXd& x, double h = 1e-5) const {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd e = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      e[i] = x[i] + h;
      const double fp = psi(e);
      e[i] = x[i] - h;
      const double fm = psi(e);
      e[i] = x[i];
      g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
  }

  /// Loss over the `rows` subset (drawn without replacement by the oracles).
  double subset_loss(const Eigen::MatrixXd& chi, const Eigen::VectorXd& b,
                     const std::vector<Eigen::Index>& rows, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& y) const {
    const auto X = weights(x);
    double acc = 0.0;
    for (Eigen::Index r : rows) {
      const double pred = ((chi.row(r) * X).array().tanh().matrix() * y).value();
      const double d = pred - b[r];
      acc += d * d;
    }
    return 0.5 * acc / static_cast<double>(rows.size());
  }

 private:
  HyperRepSpec spec_;
};

namespace detail {

/// `count` distinct indices below `total`, by partial Fisher-Yates. Returned
/// sorted so the subset loss is summed in a draw-order-independent way.
inline std::vector<Eigen::Index> sample_rows(RngStream& stream, Eigen::Index total,
                                             Eigen::Index count) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Eigen::Index>(
                           stream.next_below(static_cast<std::uint64_t>(total - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline BilevelProblem make_hyper_rep(const HyperRepSpec& spec) {
  auto model = std::make_shared<HyperRepModel>(spec);
  auto counter = std::make_shared<QueryCounter>();
  const Eigen::Index mb = spec.minibatch_rows;

  BilevelProblem p;
  p.n = model->n();
  p.m = model->m();
  p.counter = counter;
  p.F = StochasticScalarOracle(
      [model, mb](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream& noise) {
        const auto& s = model->spec();
        const auto rows = detail::sample_rows(noise, s.n1, mb);
        return model->subset_loss(s.chi1, s.b1, rows, x, y) +
               0.5 * s.gamma * x.squaredNorm();
      },
      OracleKind::Upper, counter);
  p.G = StochasticScalarOracle(
      [model, mb](const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream& noise) {
        const auto& s = model->spec();
        const auto rows = detail::sample_rows(noise, s.n2, mb);
        return model->subset_loss(s.chi2, s.b2, rows, x, y) +
               0.5 * s.gamma * y.squaredNorm();
      },
      OracleKind::Lower, counter);
  p.analytic = AnalyticRecord{
      [model](const Eigen::VectorXd& x) { return model->y_star(x); },
      [model](const Eigen::VectorXd& x) { return model->hypergrad_fd(x); },
      [model](const Eigen::VectorXd& x) { return model->psi(x); }};
  p.query_scale = mb;
  return p;
}

/// Seeded data generator: Gaussian rows, responses from a planted (x0, y0)
/// plus optional label noise.
inline HyperRepSpec make_hyper_rep_data(Eigen::Index d_in, Eigen::Index d_out, Eigen::Index n1,
                                        Eigen::Index n2, double gamma,
                                        Eigen::Index minibatch_rows, std::uint64_t data_seed,
                                        double label_noise = 0.0) {
  HyperRepSpec spec;
  spec.d_in = d_in;
  spec.d_out = d_out;
  spec.n1 = n1;
  spec.n2 = n2;
  spec.gamma = gamma;
  spec.minibatch_rows = minibatch_rows;
  RngStream root(data_seed);
  RngStream cs1 = root.child("chi1", 0);
  spec.chi1.resize(n1, d_in);
  for (Eigen::Index i = 0; i < n1; ++i) spec.chi1.row(i) = sample_gaussian(cs1, d_in).transpose();
  RngStream cs2 = root.child("chi2", 0);
  spec.chi2.resize(n2, d_in);
  for (Eigen::Index i = 0; i < n2; ++i) spec.chi2.row(i) = sample_gaussian(cs2, d_in).transpose();
  RngStream ps = root.child("planted", 0);
  const Eigen::VectorXd x0 = sample_gaussian(ps, d_in * d_out);
  const Eigen::VectorXd y0 = sample_gaussian(ps, d_out);
  const Eigen::Map<const Eigen::MatrixXd> X0(x0.data(), d_in, d_out);
  spec.b1 = (spec.chi1 * X0).array().tanh().matrix() * y0;
  spec.b2 = (spec.chi2 * X0).array().tanh().matrix() * y0;
  if (label_noise > 0.0) {
    RngStream ls = root.child("labels", 0);
    spec.b1 += label_noise * sample_gaussian(ls, n1);
    spec.b2 += label_noise * sample_gaussian(ls, n2);
  }
  spec.validate();
  return spec;
}

}  // namespace zobil
