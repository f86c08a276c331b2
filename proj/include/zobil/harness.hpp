#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "zobil/aggregate.hpp"
#include "zobil/config.hpp"
#include "zobil/csv.hpp"
#include "zobil/problems.hpp"
#include "zobil/solver_jh.hpp"
#include "zobil/solver_penalty.hpp"
#include "zobil/svg.hpp"

namespace zobil {

/// Fully materialized description of one experiment: problem generator
/// parameters, solver configuration, and run/output settings.
struct ExperimentConfig {
  std::string label;
  std::string algorithm;     // "jh" or "penalty"
  std::string problem_kind;  // "quadratic" or "hyper_rep"

  // quadratic generator
  Eigen::Index n = 10;
  Eigen::Index m = 10;
  QuadraticGenOptions quad;

  // hyper-representation generator
  Eigen::Index d_in = 8;
  Eigen::Index d_out = 16;
  Eigen::Index n1 = 100;
  Eigen::Index n2 = 100;
  double gamma = 1e-6;
  Eigen::Index minibatch_rows = 5;
  double label_noise = 0.0;

  std::uint64_t data_seed = 1;

  // run settings
  std::int64_t trials = 1;
  std::uint64_t root_seed = 0;
  std::optional<std::int64_t> budget;  // scaled queries
  std::int64_t log_stride = 1;
  std::int64_t workers = 1;
  std::string output_prefix = "out/run";

  JHConfig jh;
  PenaltyConfig pen;
};

/// Builds a fresh problem instance (own query counter) from the generator
/// parameters; identical data for identical (kind, dims, data_seed).
inline BilevelProblem build_problem(const ExperimentConfig& cfg) {
  if (cfg.problem_kind == "quadratic") {
    return make_quadratic(random_quadratic_spec(cfg.n, cfg.m, cfg.data_seed, cfg.quad));
  }
  if (cfg.problem_kind == "hyper_rep") {
    return make_hyper_rep(make_hyper_rep_data(cfg.d_in, cfg.d_out, cfg.n1, cfg.n2, cfg.gamma,
                                              cfg.minibatch_rows, cfg.data_seed,
                                              cfg.label_noise));
  }
  throw ConfigError("unknown problem.kind '" + cfg.problem_kind + "'");
}

namespace detail {

inline ProjectionSpec parse_projection(const KeyValueConfig& kv, Eigen::Index n) {
  const std::string kind = kv.get_string_or("projection.kind", "all_space");
  if (kind == "all_space") return ProjectionSpec::all_space();
  if (kind == "box") {
    const double lo = kv.get_double("projection.lower");
    const double hi = kv.get_double("projection.upper");
    return ProjectionSpec::box(Eigen::VectorXd::Constant(n, lo),
                               Eigen::VectorXd::Constant(n, hi));
  }
  if (kind == "ball") {
    return ProjectionSpec::ball(Eigen::VectorXd::Zero(n), kv.get_double("projection.radius"));
  }
  throw ConfigError("unknown projection.kind '" + kind + "'");
}

inline std::optional<std::int64_t> opt_int(const KeyValueConfig& kv, const std::string& key) {
  if (!kv.has(key)) return std::nullopt;
  return kv.get_int(key);
}

}  // namespace detail

/// Parses an experiment from the flat key-value document. Solver settings are
/// built by the `solver.eps` schedule, then overridden by explicit keys.
inline ExperimentConfig parse_experiment_config(const KeyValueConfig& kv) {
  ExperimentConfig cfg;
  cfg.algorithm = kv.get_string("algorithm");
  if (cfg.algorithm != "jh" && cfg.algorithm != "penalty")
    throw ConfigError("algorithm must be 'jh' or 'penalty'");
  cfg.problem_kind = kv.get_string("problem.kind");
  cfg.label = kv.get_string_or("label", cfg.algorithm);
  cfg.trials = kv.get_int_or("trials", 1);
  if (cfg.trials < 1) throw ConfigError("trials must be >= 1");
  cfg.root_seed = static_cast<std::uint64_t>(kv.get_int_or("root_seed", 0));
  cfg.data_seed = static_cast<std::uint64_t>(kv.get_int_or("problem.data_seed", 1));
  if (kv.has("budget")) {
    cfg.budget = kv.get_int("budget");
    if (*cfg.budget <= 0) throw ConfigError("budget must be > 0");
  }
  cfg.log_stride = kv.get_int_or("log_stride", 1);
  cfg.workers = kv.get_int_or("workers", 1);
  cfg.output_prefix = kv.get_string_or("output_prefix", "out/run");

  Eigen::Index prob_n = 0;
  Eigen::Index prob_m = 0;
  ProblemConstants consts;
  bool consts_known = false;
  if (cfg.problem_kind == "quadratic") {
    cfg.n = kv.get_int_or("problem.n", 10);
    cfg.m = kv.get_int_or("problem.m", 10);
    cfg.quad.rho = kv.get_double_or("problem.rho", 1.0);
    cfg.quad.noise_sigma_f = kv.get_double_or("problem.noise_sigma_f", 0.0);
    cfg.quad.noise_sigma_g = kv.get_double_or("problem.noise_sigma_g", 0.0);
    cfg.quad.spectrum_min = kv.get_double_or("problem.spectrum_min", 1.0);
    cfg.quad.spectrum_max = kv.get_double_or("problem.spectrum_max", 2.0);
    cfg.quad.coupling = kv.get_double_or("problem.coupling", 0.5);
    cfg.quad.y_tgt_scale = kv.get_double_or("problem.y_tgt_scale", 1.0);
    prob_n = cfg.n;
    prob_m = cfg.m;
    const QuadraticModel model(random_quadratic_spec(cfg.n, cfg.m, cfg.data_seed, cfg.quad));
    consts = model.constants();
    consts_known = true;
  } else if (cfg.problem_kind == "hyper_rep") {
    cfg.d_in = kv.get_int_or("problem.d_in", 8);
    cfg.d_out = kv.get_int_or("problem.d_out", 16);
    cfg.n1 = kv.get_int_or("problem.n1", 100);
    cfg.n2 = kv.get_int_or("problem.n2", 100);
    cfg.gamma = kv.get_double_or("problem.gamma", 1e-6);
    cfg.minibatch_rows = kv.get_int_or("problem.minibatch_rows", 5);
    cfg.label_noise = kv.get_double_or("problem.label_noise", 0.0);
    prob_n = cfg.d_in * cfg.d_out;
    prob_m = cfg.d_out;
  } else {
    throw ConfigError("unknown problem.kind '" + cfg.problem_kind + "'");
  }

  const double eps = kv.get_double_or("solver.eps", 0.1);
  std::optional<double> alpha_override;
  if (kv.has("solver.alpha")) alpha_override = kv.get_double("solver.alpha");

  try {
    if (cfg.algorithm == "jh") {
      JHTuning tuning;
      tuning.cap_inner_iters = detail::opt_int(kv, "solver.cap_t_k");
      tuning.cap_batch = detail::opt_int(kv, "solver.cap_s_k");
      tuning.hessinv.max_iterations = detail::opt_int(kv, "solver.cap_b_k");
      tuning.cap_outer_iters = detail::opt_int(kv, "solver.cap_n_outer");
      if (alpha_override)
        tuning.alpha_override = alpha_override;
      else if (!consts_known)
        tuning.alpha_override = kPenaltyDefaultAlpha;
      cfg.jh = jh_schedule(prob_n, prob_m, eps, consts, tuning);
      if (kv.has("solver.t_k")) cfg.jh.inner_iters = kv.get_int("solver.t_k");
      if (kv.has("solver.s_k")) cfg.jh.batch = kv.get_int("solver.s_k");
      if (kv.has("solver.b_k")) cfg.jh.hessinv_iters = kv.get_int("solver.b_k");
      if (kv.has("solver.beta")) cfg.jh.inner_beta = kv.get_double("solver.beta");
      if (kv.has("solver.hessinv_beta"))
        cfg.jh.hessinv_beta = kv.get_double("solver.hessinv_beta");
      if (kv.has("solver.n_outer")) cfg.jh.n_outer = kv.get_int("solver.n_outer");
      if (kv.has("solver.eta1"))
        cfg.jh.smoothing.eta1 = cfg.jh.smoothing.mu1 = kv.get_double("solver.eta1");
      if (kv.has("solver.eta2"))
        cfg.jh.smoothing.eta2 = cfg.jh.smoothing.mu2 = kv.get_double("solver.eta2");
      cfg.jh.warm_start = kv.get_bool_or("solver.warm_start", false);
      cfg.jh.projection = detail::parse_projection(kv, prob_n);
      cfg.jh.log_stride = cfg.log_stride;
      cfg.jh.budget_scaled_queries = cfg.budget;
      cfg.jh.validate();
    } else {
      PenaltyTuning tuning;
      tuning.cap_inner_iters = detail::opt_int(kv, "solver.cap_t_k");
      tuning.cap_batch = detail::opt_int(kv, "solver.cap_s_k");
      tuning.cap_outer_iters = detail::opt_int(kv, "solver.cap_n_outer");
      if (alpha_override) tuning.alpha_override = alpha_override;
      cfg.pen = penalty_schedule(prob_n, prob_m, eps,
                                 consts_known ? consts : ProblemConstants{}, tuning);
      if (kv.has("solver.t_k")) cfg.pen.inner_iters = kv.get_int("solver.t_k");
      if (kv.has("solver.s_k")) cfg.pen.batch = kv.get_int("solver.s_k");
      if (kv.has("solver.beta")) cfg.pen.inner_beta = kv.get_double("solver.beta");
      if (kv.has("solver.lambda")) cfg.pen.lambda = kv.get_double("solver.lambda");
      if (kv.has("solver.eta")) cfg.pen.eta = kv.get_double("solver.eta");
      if (kv.has("solver.mu")) cfg.pen.mu = kv.get_double("solver.mu");
      if (kv.has("solver.n_outer")) cfg.pen.n_outer = kv.get_int("solver.n_outer");
      cfg.pen.warm_start = kv.get_bool_or("solver.warm_start", true);
      const std::string f_at = kv.get_string_or("solver.inner_f_at", "y");
      if (f_at != "y" && f_at != "z") throw ConfigError("solver.inner_f_at must be y or z");
      cfg.pen.inner_f_at_y = (f_at == "y");
      cfg.pen.projection = detail::parse_projection(kv, prob_n);
      cfg.pen.log_stride = cfg.log_stride;
      cfg.pen.budget_scaled_queries = cfg.budget;
      cfg.pen.validate();
      if (consts_known) cfg.pen.validate_against(consts);
    }
  } catch (const InvalidParameterError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

/// Runs one trial; initial iterates depend only on (root_seed, trial_index),
/// so the two algorithms share starting points at equal seeds.
inline RunResult run_single_trial(const ExperimentConfig& cfg, const BilevelProblem& problem,
                                  std::int64_t trial_index) {
  const RngStream trial =
      RngStream(cfg.root_seed).child("trial", static_cast<std::uint64_t>(trial_index));
  if (cfg.algorithm == "jh") return run_jh(problem, cfg.jh, trial);
  return run_penalty(problem, cfg.pen, trial);
}

namespace detail {

inline void parallel_for(std::int64_t count, std::int64_t workers,
                         const std::function<void(std::int64_t)>& fn) {
  workers = std::max<std::int64_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    pool.emplace_back([&errors, &next, &fn, count, w] {
      try {
        for (std::int64_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Trial CSV: one row per checkpoint, exact column order below.
inline CsvTable trial_table(std::int64_t trial, const ConvergenceTrace& trace,
                            std::int64_t query_scale) {
  CsvTable t;
  t.header = {"trial",          "k",
              "f_evals",        "g_evals",
              "scaled_queries", "hypergrad_norm",
              "surrogate_norm"};
  for (const TraceRecord& r : trace.records) {
    t.rows.push_back({std::to_string(trial), std::to_string(r.k), std::to_string(r.f_evals),
                      std::to_string(r.g_evals),
                      std::to_string((r.f_evals + r.g_evals) * query_scale),
                      format_double(r.hypergrad_norm), format_double(r.surrogate_norm)});
  }
  return t;
}

inline CsvTable aggregate_table(const AggregateCurve& curve) {
  CsvTable t;
  t.header = {"scaled_queries", "mean_norm", "min_norm", "max_norm", "n_trials"};
  for (const AggregatePoint& p : curve.points) {
    t.rows.push_back({std::to_string(p.scaled_queries), format_double(p.mean_norm),
                      format_double(p.min_norm), format_double(p.max_norm),
                      std::to_string(p.n_trials)});
  }
  return t;
}

/// compare() output: aggregate rows keyed by curve label.
inline CsvTable merged_table(const std::vector<std::pair<std::string, AggregateCurve>>& curves) {
  CsvTable t;
  t.header = {"label", "scaled_queries", "mean_norm", "min_norm", "max_norm", "n_trials"};
  for (const auto& [label, curve] : curves) {
    for (const AggregatePoint& p : curve.points) {
      t.rows.push_back({label, std::to_string(p.scaled_queries), format_double(p.mean_norm),
                        format_double(p.min_norm), format_double(p.max_norm),
                        std::to_string(p.n_trials)});
    }
  }
  return t;
}

struct ExperimentResult {
  std::vector<RunResult> runs;
  AggregateCurve aggregate;
  std::int64_t query_scale = 1;
  std::vector<std::string> trial_csv_paths;
  std::string aggregate_csv_path;
  bool all_trials_failed = false;
};

/// Runs all trials (concurrently up to `workers`), writes one CSV per trial
/// plus the aggregate CSV, and returns everything in memory as well.
/// Per-trial divergence is recorded without aborting the remaining trials.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_files = true) {
  ExperimentResult result;
  result.runs.resize(static_cast<std::size_t>(cfg.trials));
  {
    const BilevelProblem probe = build_problem(cfg);
    result.query_scale = probe.query_scale;
  }
  detail::parallel_for(cfg.trials, cfg.workers, [&cfg, &result](std::int64_t i) {
    const BilevelProblem problem = build_problem(cfg);  // fresh counter per trial
    result.runs[static_cast<std::size_t>(i)] = run_single_trial(cfg, problem, i);
  });
  std::vector<ConvergenceTrace> traces;
  traces.reserve(result.runs.size());
  bool any_ok = false;
  for (const RunResult& r : result.runs) {
    traces.push_back(r.trace);
    if (!r.error) any_ok = true;
  }
  result.all_trials_failed = !any_ok;
  result.aggregate = aggregate_trials(traces, result.query_scale);
  if (write_files) {
    const std::filesystem::path prefix(cfg.output_prefix);
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    for (std::int64_t i = 0; i < cfg.trials; ++i) {
      const std::string path = cfg.output_prefix + "_trial" + std::to_string(i) + ".csv";
      write_file(path,
                 trial_table(i, result.runs[static_cast<std::size_t>(i)].trace,
                             result.query_scale)
                     .to_string());
      result.trial_csv_paths.push_back(path);
    }
    result.aggregate_csv_path = cfg.output_prefix + "_aggregate.csv";
    write_file(result.aggregate_csv_path, aggregate_table(result.aggregate).to_string());
  }
  return result;
}

struct CompareResult {
  std::vector<std::pair<std::string, AggregateCurve>> curves;
  CsvTable merged;
};

/// Runs several experiments sharing one problem and root seed, merging the
/// aggregates into one table keyed by label (the ablation driver).
inline CompareResult compare(const std::vector<ExperimentConfig>& configs,
                             bool write_files = true) {
  if (configs.empty()) throw ConfigError("compare: no configurations");
  for (const ExperimentConfig& c : configs) {
    if (c.problem_kind != configs[0].problem_kind || c.root_seed != configs[0].root_seed ||
        c.data_seed != configs[0].data_seed)
      throw ConfigError("compare: configurations must share problem and root_seed");
  }
  CompareResult out;
  for (const ExperimentConfig& c : configs) {
    ExperimentResult r = run_experiment(c, write_files);
    out.curves.emplace_back(c.label, std::move(r.aggregate));
  }
  out.merged = merged_table(out.curves);
  return out;
}

/// Reads an aggregate (or merged) CSV back into curve series for plotting.
inline std::vector<CurveSeries> load_curves(const CsvTable& table, const std::string& fallback_label) {
  std::vector<CurveSeries> out;
  const bool merged = !table.header.empty() && table.header[0] == "label";
  const int cq = table.column("scaled_queries");
  const int cm = table.column("mean_norm");
  const int clo = table.column("min_norm");
  const int chi = table.column("max_norm");
  auto series_for = [&out](const std::string& label) -> CurveSeries& {
    for (auto& s : out)
      if (s.label == label) return s;
    out.push_back(CurveSeries{label, {}, {}, {}, {}});
    return out.back();
  };
  for (const auto& row : table.rows) {
    CurveSeries& s = series_for(merged ? row[0] : fallback_label);
    s.x.push_back(parse_double(row[static_cast<std::size_t>(cq)]));
    s.y_mean.push_back(parse_double(row[static_cast<std::size_t>(cm)]));
    s.y_min.push_back(parse_double(row[static_cast<std::size_t>(clo)]));
    s.y_max.push_back(parse_double(row[static_cast<std::size_t>(chi)]));
  }
  return out;
}

/// Renders aggregate CSVs into one SVG chart with shaded min/max bands.
inline void emit_svg(const std::vector<std::string>& csv_paths, const AxesSpec& axes,
                     const std::string& out_path) {
  if (csv_paths.empty()) throw InvalidParameterError("emit_svg: no input curves");
  std::vector<CurveSeries> curves;
  for (const std::string& path : csv_paths) {
    const std::string label = std::filesystem::path(path).stem().string();
    for (CurveSeries& s : load_curves(read_csv(path), label)) curves.push_back(std::move(s));
  }
  const std::filesystem::path out(out_path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_file(out_path, render_svg(curves, axes));
}

}  // namespace zobil
