#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dflex/mappo.hpp"
#include "dflex/metrics.hpp"
#include "dflex/mpc.hpp"
#include "dflex/rbc.hpp"
#include "dflex/sac.hpp"

namespace dflex {

/// Controllers in report order.
inline const std::vector<std::string> kControllerNames{"rbc", "mpc", "sac", "mappo", "hybrid"};

struct ExperimentConfig {
  std::string scenario = "synthetic";  // "synthetic" or "csv"
  std::filesystem::path train_dir, test_dir;  // csv only
  std::size_t buildings = 25;
  std::size_t train_days = 30;
  std::size_t test_days = 28;

  std::vector<std::string> controllers{"rbc", "mpc", "sac", "mappo", "hybrid"};
  std::vector<std::uint64_t> seeds{0};
  bool evaluate_train = true;
  std::string output = "experiment";

  RbcConfig rbc;
  MpcConfig mpc;
  SacTrainConfig sac;
  MappoTrainConfig mappo;
  std::optional<std::filesystem::path> sac_checkpoint;  // frozen SAC to load instead of training
};

/// Parses `key = value` lines; `#` starts a comment. Keys are listed in the
/// README. Throws ConfigParse naming the source, line and key, or
/// UnknownController / MissingDependency for an unusable roster.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Throws UnknownController, or MissingDependency when hybrid has no SAC
/// policies to draw on.
void validate(const ExperimentConfig& cfg);

/// $DFLEX_ARTIFACT_ROOT/<output>, or ./artifacts/<output> when the variable is
/// unset. Absolute outputs are used as given.
std::filesystem::path artifact_dir(const ExperimentConfig& cfg);

struct ExperimentResult {
  std::filesystem::path dir;
  std::vector<MetricReport> reports;
};

/// Full pipeline for every seed. Writes, per seed, traces, metric JSON,
/// event logs, training curves, checkpoints and plot tables, plus a combined
/// summary.csv. Everything except metadata.json is a function of (config, seed).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Markdown tables (train and test) of the mean metrics per controller over
/// the seeds found in `dir`; the best value in each column is marked with `*`.
/// Writes report.md into `dir`. Throws MissingArtifact.
std::string render_report(const std::filesystem::path& dir);

}  // namespace dflex
