#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>

#include <Eigen/Core>

#include "zobil/errors.hpp"

namespace zobil {

/// Upper/lower variable pair: x in R^n, y in R^m.
struct Point {
  Eigen::VectorXd x;
  Eigen::VectorXd y;

  Eigen::Index n() const { return x.size(); }
  Eigen::Index m() const { return y.size(); }

  void validate() const {
    if (x.size() < 1 || y.size() < 1)
      throw InvalidParameterError("Point: both blocks must be non-empty");
    if (!x.allFinite() || !y.allFinite()) throw NumericError("Point: non-finite entry");
  }
};

/// Gaussian smoothing radii. eta* perturb the x block, mu* the y block; index
/// 1 belongs to the upper objective, index 2 to the lower one. eta2 == 0 means
/// the lower oracle is perturbed in y only.
struct SmoothingParams {
  double eta1 = 0.0;
  double mu1 = 0.0;
  double eta2 = 0.0;
  double mu2 = 0.0;

  /// Single-radius-per-block setup (eta1 = eta2 = eta, mu1 = mu2 = mu).
  static SmoothingParams uniform(double eta, double mu) { return {eta, mu, eta, mu}; }

  void validate() const {
    if (!(std::isfinite(eta1) && std::isfinite(mu1) && std::isfinite(eta2) &&
          std::isfinite(mu2)))
      throw InvalidParameterError("SmoothingParams: non-finite radius");
    if (!(eta1 > 0.0)) throw InvalidParameterError("SmoothingParams: eta1 must be > 0");
    if (!(mu1 > 0.0)) throw InvalidParameterError("SmoothingParams: mu1 must be > 0");
    if (eta2 < 0.0) throw InvalidParameterError("SmoothingParams: eta2 must be >= 0");
    if (!(mu2 > 0.0)) throw InvalidParameterError("SmoothingParams: mu2 must be > 0");
  }
};

/// Plain snapshot of per-oracle evaluation counts.
struct QueryCount {
  std::int64_t f_evals = 0;
  std::int64_t g_evals = 0;

  std::int64_t total() const { return f_evals + g_evals; }

  friend QueryCount operator-(const QueryCount& a, const QueryCount& b) {
    return {a.f_evals - b.f_evals, a.g_evals - b.g_evals};
  }
  friend bool operator==(const QueryCount& a, const QueryCount& b) {
    return a.f_evals == b.f_evals && a.g_evals == b.g_evals;
  }
};

/// Race-free evaluation tally shared by the two oracles of a problem.
/// Counts only ever grow; one stochastic function evaluation costs 1.
class QueryCounter {
 public:
  void add_f(std::int64_t k = 1) noexcept { f_.fetch_add(k, std::memory_order_relaxed); }
  void add_g(std::int64_t k = 1) noexcept { g_.fetch_add(k, std::memory_order_relaxed); }

  QueryCount snapshot() const noexcept {
    return {f_.load(std::memory_order_relaxed), g_.load(std::memory_order_relaxed)};
  }

 private:
  std::atomic<std::int64_t> f_{0};
  std::atomic<std::int64_t> g_{0};
};

/// Smoothness / strong-convexity / variance constants of a problem instance,
/// consumed by the schedule builders. Zero means "not known".
struct ProblemConstants {
  double l0f = 0.0;     // Lipschitz constant of f
  double l1f = 0.0;     // Lipschitz constant of grad f
  double l1g = 0.0;     // Lipschitz constant of grad g
  double l2g = 0.0;     // Lipschitz constant of hess g
  double lam_g = 0.0;   // strong-convexity modulus of g in y
  double sig1f2 = 0.0;  // variance bound of grad F
  double sig1g2 = 0.0;  // variance bound of grad G
  double sig2g2 = 0.0;  // variance bound of hess G
  double l1psi = 0.0;   // Lipschitz constant of the hypergradient

  void validate() const {
    const double vals[] = {l0f, l1f, l1g, l2g, sig1f2, sig1g2, sig2g2, l1psi};
    for (double v : vals)
      if (!(std::isfinite(v) && v >= 0.0))
        throw InvalidParameterError("ProblemConstants: negative or non-finite entry");
    if (!(lam_g > 0.0)) throw InvalidParameterError("ProblemConstants: lam_g must be > 0");
    if (l1g > 0.0 && lam_g > l1g)
      throw InvalidParameterError("ProblemConstants: lam_g must not exceed l1g");
  }
};

}  // namespace zobil
