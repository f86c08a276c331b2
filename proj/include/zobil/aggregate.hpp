#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "zobil/errors.hpp"
#include "zobil/trace.hpp"

namespace zobil {

/// One band checkpoint of an aggregated set of trials.
struct AggregatePoint {
  std::int64_t scaled_queries = 0;
  double mean_norm = 0.0;
  double min_norm = 0.0;
  double max_norm = 0.0;
  std::int64_t n_trials = 0;
};

struct AggregateCurve {
  std::vector<AggregatePoint> points;
};

namespace detail {

/// Per-trial step function of hypergrad norm over scaled queries (records
/// without a logged norm are skipped).
struct TrialSeries {
  std::vector<std::int64_t> queries;
  std::vector<double> norms;
};

inline TrialSeries trial_series(const ConvergenceTrace& trace, std::int64_t query_scale) {
  TrialSeries s;
  for (const TraceRecord& r : trace.records) {
    if (std::isnan(r.hypergrad_norm)) continue;
    s.queries.push_back((r.f_evals + r.g_evals) * query_scale);
    s.norms.push_back(r.hypergrad_norm);
  }
  return s;
}

/// Last observation at or before `q` (queries are increasing per trial).
inline double locf(const TrialSeries& s, std::int64_t q) {
  const auto it = std::upper_bound(s.queries.begin(), s.queries.end(), q);
  const auto idx = std::max<std::ptrdiff_t>(it - s.queries.begin() - 1, 0);
  return s.norms[static_cast<std::size_t>(idx)];
}

}  // namespace detail

/// Aggregates trials onto the union query grid by last-observation-carried-
/// forward, producing the mean curve and the min/max band.
inline AggregateCurve aggregate_trials(const std::vector<ConvergenceTrace>& traces,
                                       std::int64_t query_scale) {
  std::vector<detail::TrialSeries> series;
  for (const auto& t : traces) {
    detail::TrialSeries s = detail::trial_series(t, query_scale);
    if (!s.queries.empty()) series.push_back(std::move(s));
  }
  AggregateCurve curve;
  if (series.empty()) return curve;
  std::vector<std::int64_t> grid;
  for (const auto& s : series) grid.insert(grid.end(), s.queries.begin(), s.queries.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (std::int64_t q : grid) {
    AggregatePoint p;
    p.scaled_queries = q;
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::int64_t count = 0;
    for (const auto& s : series) {
      if (s.queries.front() > q) continue;  // trial has no observation yet
      const double v = detail::locf(s, q);
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      ++count;
    }
    if (count == 0) continue;
    p.mean_norm = sum / static_cast<double>(count);
    p.min_norm = lo;
    p.max_norm = hi;
    p.n_trials = count;
    curve.points.push_back(p);
  }
  return curve;
}

/// Scaled queries at which the aggregate mean first reaches `threshold`;
/// -1 when it never does.
inline std::int64_t queries_to_threshold(const AggregateCurve& curve, double threshold) {
  for (const AggregatePoint& p : curve.points)
    if (p.mean_norm <= threshold) return p.scaled_queries;
  return -1;
}

}  // namespace zobil
