#pragma once

#include "clcc/checkpoint.hpp"
#include "clcc/data.hpp"
#include "clcc/evaluation.hpp"
#include "clcc/losses.hpp"
#include "clcc/model.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace clcc {

struct TrainConfig {
  ModelConfig model;
  int64_t image_side = 320;

  int64_t total_epochs = 300;
  int64_t stage1_epochs = 100;
  int64_t labeled_per_batch = 4;
  int64_t unlabeled_per_batch = 4;
  /// Caps steps per epoch; 0 means one full pass over the epoch-defining pool.
  int64_t max_steps_per_epoch = 0;

  double lr = 1e-3;
  double weight_decay = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;

  double tau = 0.1;
  /// Random negatives per anchor; 0 uses every other cell.
  int64_t negatives = 0;
  /// alpha during stage one and beta during stage two. Zero both for the
  /// supervised baseline.
  double contrast_weight = 1.0;
  double consist_weight = 1.0;

  bool augment = false;
  uint64_t seed = 0;
  int64_t eval_batch = 8;
  std::string device = "cpu";

  void validate() const;
};

/// Stage one (epoch < stage1_epochs) returns (contrast_weight, 0), stage two
/// returns (0, consist_weight). Throws std::out_of_range outside the run.
LossWeights loss_schedule(int64_t epoch, const TrainConfig& cfg);

struct Batch {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;

  size_t size() const { return labeled.size() + unlabeled.size(); }
  std::vector<std::string> ids() const;
};

/// Draws a without-replacement order over a pool, reshuffling when exhausted.
class PoolCycler {
 public:
  explicit PoolCycler(size_t size = 0) : size_(size) {}
  void reshuffle(std::mt19937_64& rng);
  size_t remaining() const { return order_.size() - cursor_; }
  size_t size() const { return size_; }
  size_t next(std::mt19937_64& rng);

 private:
  size_t size_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

/// Mixes labeled and unlabeled samples per step. One epoch is a pass over the
/// unlabeled pool (the labeled pool cycles); with no unlabeled draws it is a
/// pass over the labeled pool. Batches depend only on (seed, epoch, step).
class BatchComposer {
 public:
  BatchComposer(const std::vector<Sample>& labeled,
                const std::vector<Sample>& unlabeled,
                int64_t labeled_per_batch,
                int64_t unlabeled_per_batch,
                uint64_t seed,
                bool augment = false);

  void start_epoch(int64_t epoch);
  int64_t steps_per_epoch() const;
  Batch next();

 private:
  const std::vector<Sample>& labeled_;
  const std::vector<Sample>& unlabeled_;
  int64_t labeled_per_batch_;
  int64_t unlabeled_per_batch_;
  uint64_t seed_;
  bool augment_;
  bool unlabeled_defines_epoch_;
  std::mt19937_64 rng_;
  PoolCycler labeled_cycle_;
  PoolCycler unlabeled_cycle_;
};

struct StepLog {
  std::optional<double> sup;
  std::optional<double> contrast;
  std::optional<double> consist;
  double total = 0.0;
  double grad_norm = 0.0;
  bool updated = false;
};

/// One optimization step. Supervised loss uses labeled images only (they get
/// their own forward so normalization statistics never mix in unlabeled
/// images); the unsupervised terms use every image, and a term with zero
/// weight is not computed at all. Throws TrainingError on non-finite values.
StepLog train_step(SegmentationModelImpl& model,
                   const Batch& batch,
                   const LossWeights& weights,
                   torch::optim::Optimizer& optimizer,
                   std::optional<at::Generator> negatives_rng = std::nullopt,
                   int64_t negatives = 0);

struct EpochLog {
  int64_t epoch = 0;
  int stage = 1;
  double alpha = 0.0;
  double beta = 0.0;
  std::optional<double> sup;
  std::optional<double> contrast;
  std::optional<double> consist;
  double total = 0.0;
  int64_t steps = 0;
  MetricsReport val;
  double seconds = 0.0;
};

std::string to_json_line(const EpochLog& log);

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::vector<EpochLog> epochs;
  TrainState state;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const EpochLog&)> on_epoch;
  /// Stop after this many epochs of the current invocation (for tests).
  std::optional<int64_t> stop_after_epochs;
};

/// Two-stage loop. Writes <run_dir>/ckpt_best, <run_dir>/ckpt_last and
/// appends one JSON record per epoch to <run_dir>/train_log.jsonl. Entering
/// stage two reloads the best stage-one checkpoint.
TrainResult run_training(const TrainConfig& cfg,
                         const Splits& splits,
                         const std::filesystem::path& run_dir,
                         const TrainOptions& options = {});

/// Builds the AdamW optimizer used by run_training.
std::unique_ptr<torch::optim::Optimizer> make_optimizer(SegmentationModelImpl& model, const TrainConfig& cfg);

}  // namespace clcc
