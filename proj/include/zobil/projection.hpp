#pragma once

#include <cmath>

#include <Eigen/Core>

#include "zobil/errors.hpp"

namespace zobil {

/// Feasible set for the outer variable, restricted to kinds with a
/// closed-form Euclidean projection.
struct ProjectionSpec {
  enum class Kind { AllSpace, Box, Ball };

  Kind kind = Kind::AllSpace;
  Eigen::VectorXd lower, upper;  // Box
  Eigen::VectorXd center;        // Ball
  double radius = 0.0;           // Ball

  static ProjectionSpec all_space() { return {}; }

  static ProjectionSpec box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    ProjectionSpec s;
    s.kind = Kind::Box;
    s.lower = std::move(lo);
    s.upper = std::move(hi);
    return s;
  }

  static ProjectionSpec ball(Eigen::VectorXd c, double r) {
    ProjectionSpec s;
    s.kind = Kind::Ball;
    s.center = std::move(c);
    s.radius = r;
    return s;
  }

  void validate(Eigen::Index n) const {
    switch (kind) {
      case Kind::AllSpace:
        return;
      case Kind::Box:
        if (lower.size() != n || upper.size() != n)
          throw InvalidParameterError("ProjectionSpec: box bounds must match the x dimension");
        if (((upper - lower).array() < 0.0).any())
          throw InvalidParameterError("ProjectionSpec: box needs lower <= upper");
        return;
      case Kind::Ball:
        if (center.size() != n)
          throw InvalidParameterError("ProjectionSpec: ball center must match the x dimension");
        if (!(radius > 0.0)) throw InvalidParameterError("ProjectionSpec: ball radius must be > 0");
        return;
    }
  }

  Eigen::VectorXd project(const Eigen::VectorXd& p) const {
    switch (kind) {
      case Kind::AllSpace:
        return p;
      case Kind::Box:
        return p.cwiseMax(lower).cwiseMin(upper);
      case Kind::Ball: {
        const Eigen::VectorXd d = p - center;
        const double r = d.norm();
        if (r <= radius) return p;
        return center + d * (radius / r);
      }
    }
    return p;
  }
};

/// x+ = argmin_{x in X} <d, x - x0> + ||x - x0||^2 / (2 alpha), i.e. the
/// projection of the explicit step x0 - alpha d onto X.
inline Eigen::VectorXd prox_step(const ProjectionSpec& X, const Eigen::VectorXd& x0,
                                 const Eigen::VectorXd& d, double alpha) {
  if (!(alpha > 0.0)) throw InvalidParameterError("prox_step: alpha must be > 0");
  return X.project(x0 - alpha * d);
}

}  // namespace zobil
