#pragma once

// Single-file checkpoint archive:
//   meta/schema_version   int64
//   meta/model_config     JSON text (bytes)
//   meta/image_side       training input side, 0 when unknown
//   params/<name>, buffers/<name>   hierarchical module names, '.' -> '/'
//   state/*               training progress
//   optimizer             nested archive (optional)

#include "clcc/model.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>

namespace clcc {

inline constexpr int64_t kCheckpointSchemaVersion = 1;

struct TrainState {
  int64_t epoch = 0;  // next epoch to run
  int64_t step = 0;
  double best_val_dice = -1.0;
  int64_t best_epoch = -1;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path,
                     SegmentationModelImpl& model,
                     const TrainState& state = {},
                     torch::optim::Optimizer* optimizer = nullptr,
                     int64_t image_side = 0);

struct LoadedCheckpoint {
  SegmentationModel model{nullptr};
  TrainState state;
  int64_t image_side = 0;
};

/// Builds a model from the embedded config and loads its weights.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads weights (and optimizer moments when both sides have them) into an
/// existing model whose config must match the archive's.
TrainState restore_checkpoint(const std::filesystem::path& path,
                              SegmentationModelImpl& model,
                              torch::optim::Optimizer* optimizer = nullptr);

}  // namespace clcc
