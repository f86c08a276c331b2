#pragma once

#include <functional>
#include <memory>
#include <utility>

#include <Eigen/Core>

#include "zobil/rng.hpp"
#include "zobil/types.hpp"

namespace zobil {

/// Which objective an oracle evaluates; drives query accounting.
enum class OracleKind { Upper, Lower };  // F respectively G

/// Noisy value access to one stochastic objective. Every call costs exactly
/// one query. The noise stream is passed by value, so evaluating twice with
/// the same substream returns the same number.
class StochasticScalarOracle {
 public:
  using EvalFn =
      std::function<double(const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream& noise)>;

  StochasticScalarOracle() = default;
  StochasticScalarOracle(EvalFn fn, OracleKind kind, std::shared_ptr<QueryCounter> counter)
      : fn_(std::move(fn)), kind_(kind), counter_(std::move(counter)) {}

  double operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& y, RngStream noise) const {
    if (counter_) {
      if (kind_ == OracleKind::Upper)
        counter_->add_f();
      else
        counter_->add_g();
    }
    return fn_(x, y, noise);
  }

  explicit operator bool() const { return static_cast<bool>(fn_); }
  OracleKind kind() const { return kind_; }
  const std::shared_ptr<QueryCounter>& counter() const { return counter_; }

 private:
  EvalFn fn_;
  OracleKind kind_ = OracleKind::Upper;
  std::shared_ptr<QueryCounter> counter_;
};

}  // namespace zobil
