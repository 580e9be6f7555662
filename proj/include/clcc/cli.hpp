#pragma once

#include "clcc/config.hpp"
#include "clcc/evaluation.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clcc {

/// Loads the configured dataset (directory or synthetic) resized to the
/// configured side.
std::vector<Sample> load_configured_dataset(const RunConfig& rc);

struct TrainCommandResult {
  std::filesystem::path run_dir;
  TrainResult training;
  MetricsReport test;
};

/// Writes config.ini (resolved snapshot), split_manifest.json, the epoch log,
/// checkpoints and test_report.{json,txt} under run.dir.
TrainCommandResult cmd_train(const ConfigMap& config,
                             std::ostream& log,
                             const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Evaluates a checkpoint on eval.split. Partitions come from `manifest` when
/// given, else from <run.dir>/split_manifest.json when present, else from the
/// configured split seeds.
MetricsReport cmd_eval(const ConfigMap& config,
                       const std::filesystem::path& checkpoint,
                       const std::optional<std::filesystem::path>& manifest,
                       const std::filesystem::path& out_stem);

struct PredictOutputs {
  std::filesystem::path mask;
  std::filesystem::path overlay;
  std::optional<std::filesystem::path> probability;
};

/// Writes a binary mask (0/255) at the input's resolution plus an overlay.
PredictOutputs cmd_predict(const std::filesystem::path& checkpoint,
                           const std::filesystem::path& image,
                           const std::filesystem::path& out,
                           bool export_probability = false);

/// Writes a synthetic dataset in the images/ + masks/ layout.
void cmd_synth(const ConfigMap& config, const std::filesystem::path& out_dir);

struct AblationVariant {
  std::string name;
  std::string slug;
  TrainConfig train;
};

/// The three single-code-path variants (w/o consist, w/o contrast, all), with
/// the supervised baseline first when requested.
std::vector<AblationVariant> ablation_variants(const TrainConfig& base, bool with_baseline);

struct AblationResult {
  std::vector<std::pair<std::string, RunAggregate>> rows;
  std::vector<std::pair<std::string, std::vector<MetricsReport>>> runs;
  std::string table;
};

/// Trains every variant run.repeats times with shifted label and init seeds
/// and writes ablation.{json,txt} under run.dir.
AblationResult cmd_ablate(const ConfigMap& config, bool with_baseline, std::ostream& log);

/// Full command line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clcc
