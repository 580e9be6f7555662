#pragma once

#include "clcc/data.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace clcc {

class SegmentationModelImpl;

/// All values are percentages in [0, 100].
struct SampleMetrics {
  std::string id;
  double mae = 0.0;
  double dice_fg = 0.0;
  double miou = 0.0;
};

struct MetricOptions {
  /// MAE on the 0.5-thresholded map instead of probabilities.
  bool binarized_mae = false;
};

/// Foreground probability [H, W] in [0, 1] against a binary mask [H, W].
/// Pixels with probability > 0.5 count as foreground (ties go to background).
/// Dice on the foreground class; mIoU over background and foreground. A class
/// absent from both prediction and mask scores 100 for that class.
SampleMetrics compute_metrics(const torch::Tensor& prob_fg, const torch::Tensor& mask, const MetricOptions& opt = {});

struct MetricsReport {
  double mae = 0.0;
  double dice_fg = 0.0;
  double miou = 0.0;
  std::vector<SampleMetrics> per_sample;
  int64_t n_samples = 0;
};

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;  // sample std, N-1 denominator
};

struct RunAggregate {
  MetricStat mae;
  MetricStat dice_fg;
  MetricStat miou;
  int64_t runs = 0;
};

/// Maps images [B, 3, H, W] to foreground probabilities [B, H, W].
using ForegroundPredictor = std::function<torch::Tensor(const torch::Tensor&)>;

/// Scores every sample (mask, or audit mask for stripped samples) and averages.
MetricsReport evaluate(const ForegroundPredictor& predict,
                       const std::vector<Sample>& samples,
                       const MetricOptions& opt = {},
                       int64_t batch_size = 8);

/// Eval-mode, no-grad forward of `model`; restores the previous train/eval mode.
MetricsReport evaluate_model(SegmentationModelImpl& model,
                             const std::vector<Sample>& samples,
                             const MetricOptions& opt = {},
                             int64_t batch_size = 8);

RunAggregate aggregate_runs(const std::vector<MetricsReport>& reports);

/// "73.63 ± 0.25"
std::string format_mean_std(const MetricStat& s);

/// Human-readable table with one row per named aggregate.
std::string format_table(const std::vector<std::pair<std::string, RunAggregate>>& rows);
std::string format_report(const MetricsReport& report);

/// Writes <stem>.json (per-sample rows plus aggregate) and <stem>.txt.
void write_report(const MetricsReport& report, const std::filesystem::path& stem);
void write_aggregate_table(const std::vector<std::pair<std::string, RunAggregate>>& rows,
                           const std::vector<std::pair<std::string, std::vector<MetricsReport>>>& runs,
                           const std::filesystem::path& stem);

}  // namespace clcc
