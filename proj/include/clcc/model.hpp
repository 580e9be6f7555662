#pragma once

// Segmentation network for cross-level training: a backbone producing dense
// features, a projection head shared by the full-image grid and the patch
// embeddings, and a 1x1 prediction head shared by both levels.

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>

namespace clcc {

enum class BackboneKind { UNet, Pointwise };

std::string to_string(BackboneKind kind);
BackboneKind backbone_from_string(const std::string& name);

struct ModelConfig {
  BackboneKind backbone = BackboneKind::UNet;
  int64_t in_channels = 3;
  int64_t base_channels = 32;
  int64_t depth = 4;
  int64_t feature_channels = 16;  // C
  int64_t embed_dim = 128;        // D
  int64_t grid_side = 4;          // n

  /// Desk-scale profile used by tests and smoke runs (64x64 inputs).
  static ModelConfig desk();

  /// Throws ConfigError if any field is non-positive.
  void validate() const;

  /// Input sides must split into n patches whose side is still a multiple of
  /// 2^depth, since patches go through the same backbone.
  void validate_input_side(int64_t side) const;

  int64_t spatial_divisor() const;
};

/// Dense feature extractor f. Output keeps the input's spatial resolution.
class Backbone : public torch::nn::Module {
 public:
  /// [B, in, H, W] -> [B, C, H, W]
  virtual torch::Tensor forward(const torch::Tensor& images) = 0;
  virtual int64_t out_channels() const = 0;
  /// H and W must be multiples of this value.
  virtual int64_t spatial_divisor() const = 0;
};

class UNetBackbone : public Backbone {
 public:
  explicit UNetBackbone(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images) override;
  int64_t out_channels() const override { return out_channels_; }
  int64_t spatial_divisor() const override { return int64_t{1} << depth_; }

 private:
  int64_t in_channels_;
  int64_t depth_;
  int64_t out_channels_;
  torch::nn::Sequential stem_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::ModuleList merge_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};

/// Single 1x1 convolution. Every output pixel sees exactly one input pixel,
/// which makes patch and full-image paths coincide; used for equivalence
/// checks and as a trivially small model.
class PointwiseBackbone : public Backbone {
 public:
  explicit PointwiseBackbone(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images) override;
  int64_t out_channels() const override { return out_channels_; }
  int64_t spatial_divisor() const override { return 1; }
  torch::nn::Conv2d& conv() { return conv_; }

 private:
  int64_t in_channels_;
  int64_t out_channels_;
  torch::nn::Conv2d conv_{nullptr};
};

/// Projection head p: block average pooling followed by three 1x1 convolutions
/// (ReLU between them) and L2 normalization.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(int64_t in_channels, int64_t embed_dim);

  /// Pooled [B, C, h, w] -> unnormalized embeddings [B, D, h, w].
  torch::Tensor embed(const torch::Tensor& pooled);

  /// Feature map [B, C, H, W] -> [B, n, n, D], unit-norm cells.
  torch::Tensor project_global(const torch::Tensor& features, int64_t n);
  /// Same as project_global but before normalization, [B, D, n, n].
  torch::Tensor project_global_raw(const torch::Tensor& features, int64_t n);
  /// Patch feature maps [P, C, h, w] -> [P, D], unit-norm rows.
  torch::Tensor project_patch(const torch::Tensor& patch_features);

 private:
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(ProjectionHead);

/// Prediction head h: one 1x1 convolution to background/foreground logits.
class PredictionHeadImpl : public torch::nn::Module {
 public:
  explicit PredictionHeadImpl(int64_t in_channels);
  /// [B, C, H, W] -> [B, 2, H, W]
  torch::Tensor forward(const torch::Tensor& features);
  torch::nn::Conv2d& conv() { return conv_; }

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(PredictionHead);

class SegmentationModelImpl : public torch::nn::Module {
 public:
  explicit SegmentationModelImpl(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Backbone pass with divisibility check; throws ShapeError naming the axis.
  torch::Tensor features(const torch::Tensor& images);
  torch::Tensor project_global(const torch::Tensor& features);
  torch::Tensor project_patch(const torch::Tensor& patch_features);
  torch::Tensor predict(const torch::Tensor& features);

  /// Foreground probability [B, H, W] for images [B, 3, H, W].
  torch::Tensor foreground_probability(const torch::Tensor& images);

  Backbone& backbone() { return *backbone_; }
  ProjectionHead& projector() { return projector_; }
  PredictionHead& predictor() { return predictor_; }

 private:
  ModelConfig cfg_;
  std::shared_ptr<Backbone> backbone_;
  ProjectionHead projector_{nullptr};
  PredictionHead predictor_{nullptr};
};
TORCH_MODULE(SegmentationModel);

}  // namespace clcc
