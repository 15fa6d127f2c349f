#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "dflex/error.hpp"
#include "dflex/experiment.hpp"
#include "dflex/scenario.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

bool is_config_error(dflex::ErrorCode code) {
  using dflex::ErrorCode;
  return code == ErrorCode::ConfigParse || code == ErrorCode::UnknownController ||
         code == ErrorCode::MissingDependency;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"District flexibility control experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Train and evaluate the configured controllers");
  std::string config_path;
  std::optional<std::string> out_override;
  run->add_option("config", config_path, "key = value experiment config")->required();
  run->add_option("--out", out_override, "Artifact directory (overrides DFLEX_ARTIFACT_ROOT and output)");

  auto* report = app.add_subcommand("report", "Render summary tables from an artifact directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "Artifact directory written by run")->required();

  auto* gen = app.add_subcommand("gen-scenario", "Write a synthetic scenario in the csv layout");
  std::size_t buildings = 25, days = 28;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> roster_seed;
  dflex::SyntheticOptions opts;
  std::string gen_out;
  gen->add_option("--buildings", buildings, "Number of buildings")->check(CLI::PositiveNumber);
  gen->add_option("--days", days, "Length in days")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Weather seed");
  gen->add_option("--roster-seed", roster_seed, "Building roster seed (defaults to the weather seed)");
  gen->add_option("--t-out-mean", opts.t_out_mean_c, "Mean outdoor temperature (C)");
  gen->add_option("--start", opts.start, "First timestamp, ISO-8601");
  gen->add_option("--label", opts.label, "Scenario label");
  gen->add_option("--out", gen_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) {
      const dflex::ExperimentConfig cfg = dflex::load_config(config_path);
      const auto dir = out_override ? std::filesystem::path(*out_override) : dflex::artifact_dir(cfg);
      const auto res = dflex::run_experiment(cfg, dir);
      std::cout << "wrote " << res.reports.size() << " metric reports to " << res.dir.string() << "\n";
      std::cout << dflex::render_report(res.dir);
    } else if (*report) {
      std::cout << dflex::render_report(report_dir);
    } else if (*gen) {
      opts.roster_seed = roster_seed;
      const auto sc = dflex::generate_synthetic_scenario(buildings, days, seed, opts);
      dflex::write_scenario(sc, gen_out);
      std::cout << "wrote " << sc.num_buildings() << " buildings x " << sc.num_steps() << " steps to " << gen_out
                << "\n";
    }
  } catch (const dflex::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
