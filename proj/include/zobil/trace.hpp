#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zobil/errors.hpp"
#include "zobil/rng.hpp"

namespace zobil {

/// One checkpoint of a solver run: cumulative query counts after outer
/// iteration k plus the gradient norms at iterate x_k. hypergrad_norm is NaN
/// when the problem carries no analytic record or the logging stride skipped
/// this iterate; surrogate_norm is NaN at k = 0 (no estimate exists yet).
struct TraceRecord {
  std::int64_t k = 0;
  std::int64_t f_evals = 0;
  std::int64_t g_evals = 0;
  double hypergrad_norm = std::numeric_limits<double>::quiet_NaN();
  double surrogate_norm = std::numeric_limits<double>::quiet_NaN();
};

struct ConvergenceTrace {
  std::vector<TraceRecord> records;
  std::int64_t chosen_index = 0;  // the output index R, sampled after the run
};

/// Completed (or early-stopped) solver run; `error` holds the failure reason
/// when divergence or a numeric fault truncated the run.
struct RunResult {
  ConvergenceTrace trace;
  std::optional<std::string> error;
};

/// Samples the output index R with Prob(R = k) proportional to weights[k].
inline std::int64_t sample_output_index(const std::vector<double>& weights, RngStream& stream) {
  if (weights.empty()) throw InvalidParameterError("sample_output_index: no weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidParameterError("sample_output_index: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidParameterError("sample_output_index: zero weight total");
  const double u = stream.next_double() * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    cum += weights[k];
    if (u < cum) return static_cast<std::int64_t>(k);
  }
  return static_cast<std::int64_t>(weights.size()) - 1;
}

/// Constant or per-iteration outer step size.
class StepSchedule {
 public:
  StepSchedule() = default;

  static StepSchedule constant(double a) {
    StepSchedule s;
    s.constant_ = a;
    return s;
  }

  static StepSchedule per_iteration(std::function<double(std::int64_t)> fn) {
    StepSchedule s;
    s.fn_ = std::move(fn);
    return s;
  }

  double at(std::int64_t k) const { return fn_ ? fn_(k) : constant_; }

  bool is_constant() const { return !fn_; }

 private:
  double constant_ = 0.0;
  std::function<double(std::int64_t)> fn_;
};

}  // namespace zobil
