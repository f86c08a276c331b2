// Benchmark CLI for the zeroth-order bilevel solvers: run experiments from a
// config file, merge ablation runs, plot aggregate curves, and run the
// statistical validation battery.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric divergence in all
// trials, 4 I/O error.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zobil/harness.hpp"
#include "zobil/standard_checks.hpp"

namespace {

int run_command(const std::string& config_path, const std::vector<std::string>& overrides) {
  zobil::KeyValueConfig kv = zobil::KeyValueConfig::parse_file(config_path);
  for (const std::string& o : overrides) kv.apply_override(o);
  const zobil::ExperimentConfig cfg = zobil::parse_experiment_config(kv);
  const zobil::ExperimentResult result = zobil::run_experiment(cfg);
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const auto& r = result.runs[i];
    if (r.error)
      std::printf("trial %zu: FAILED (%s) after %zu records\n", i, r.error->c_str(),
                  r.trace.records.size());
    else
      std::printf("trial %zu: ok, %zu records, R=%lld\n", i, r.trace.records.size(),
                  static_cast<long long>(r.trace.chosen_index));
  }
  std::printf("aggregate: %s\n", result.aggregate_csv_path.c_str());
  return result.all_trials_failed ? 3 : 0;
}

int compare_command(const std::vector<std::string>& config_paths,
                    const std::vector<std::string>& overrides, const std::string& out_path) {
  std::vector<zobil::ExperimentConfig> cfgs;
  for (const std::string& path : config_paths) {
    zobil::KeyValueConfig kv = zobil::KeyValueConfig::parse_file(path);
    for (const std::string& o : overrides) kv.apply_override(o);
    cfgs.push_back(zobil::parse_experiment_config(kv));
  }
  const zobil::CompareResult result = zobil::compare(cfgs);
  const std::filesystem::path out(out_path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  zobil::write_file(out_path, result.merged.to_string());
  std::printf("merged: %s\n", out_path.c_str());
  return 0;
}

int plot_command(const std::vector<std::string>& inputs, const std::string& out_path,
                 bool log_y, const std::string& title) {
  zobil::AxesSpec axes;
  axes.log_y = log_y;
  axes.title = title;
  zobil::emit_svg(inputs, axes, out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int validate_command(const std::string& out_path) {
  const std::vector<zobil::CheckReport> reports = zobil::run_standard_validation();
  bool all_pass = true;
  for (const auto& r : reports) {
    std::printf("%-44s measured=%-12.5g ref=%-12.5g %s\n", r.name.c_str(), r.measured,
                r.reference, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!out_path.empty()) {
    zobil::CsvTable t;
    t.header = {"name", "measured", "reference", "pass"};
    for (const auto& r : reports)
      t.rows.push_back({r.name, zobil::format_double(r.measured),
                        zobil::format_double(r.reference), r.pass ? "true" : "false"});
    zobil::write_file(out_path, t.to_string());
    std::printf("report: %s\n", out_path.c_str());
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zeroth-order stochastic bilevel optimization benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--override", overrides, "key=value config overrides");

  std::vector<std::string> compare_paths;
  std::string compare_out = "compare.csv";
  std::vector<std::string> compare_overrides;
  auto* cmp = app.add_subcommand("compare", "run several configs and merge their aggregates");
  cmp->add_option("--configs", compare_paths, "experiment config files")->required();
  cmp->add_option("--out", compare_out, "merged CSV path");
  cmp->add_option("--override", compare_overrides, "key=value overrides applied to every config");

  std::vector<std::string> plot_inputs;
  std::string plot_out = "plot.svg";
  bool plot_logy = false;
  std::string plot_title;
  auto* plot = app.add_subcommand("plot", "render aggregate CSVs as an SVG chart");
  plot->add_option("--in", plot_inputs, "aggregate or merged CSV files")->required();
  plot->add_option("--out", plot_out, "output SVG path");
  plot->add_flag("--log-y", plot_logy, "logarithmic y axis");
  plot->add_option("--title", plot_title, "chart title");

  std::string validate_out;
  auto* val = app.add_subcommand("validate", "run the estimator/bound validation battery");
  val->add_option("--out", validate_out, "machine-readable report CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(config_path, overrides);
    if (cmp->parsed()) return compare_command(compare_paths, compare_overrides, compare_out);
    if (plot->parsed()) return plot_command(plot_inputs, plot_out, plot_logy, plot_title);
    if (val->parsed()) return validate_command(validate_out);
  } catch (const zobil::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const zobil::InvalidParameterError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const zobil::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
