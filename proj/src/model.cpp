#include "clcc/model.hpp"

#include "clcc/errors.hpp"
#include "clcc/patching.hpp"

namespace clcc {

namespace nn = torch::nn;

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::UNet: return "unet";
    case BackboneKind::Pointwise: return "pointwise";
  }
  return "unknown";
}

BackboneKind backbone_from_string(const std::string& name) {
  if (name == "unet") return BackboneKind::UNet;
  if (name == "pointwise") return BackboneKind::Pointwise;
  throw ConfigError("unknown backbone '" + name + "' (expected unet or pointwise)");
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.depth = 3;
  cfg.feature_channels = 16;
  cfg.embed_dim = 16;
  cfg.grid_side = 4;
  return cfg;
}

void ModelConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive, got " + std::to_string(v));
  };
  positive(in_channels, "in_channels");
  positive(base_channels, "base_channels");
  positive(depth, "depth");
  positive(feature_channels, "feature_channels");
  positive(embed_dim, "embed_dim");
  positive(grid_side, "grid_side");
  if (depth > 8) throw ConfigError("model.depth above 8 is not supported");
}

int64_t ModelConfig::spatial_divisor() const {
  return backbone == BackboneKind::UNet ? (int64_t{1} << depth) : 1;
}

void ModelConfig::validate_input_side(int64_t side) const {
  if (side <= 0) throw ConfigError("image side must be positive");
  if (side % grid_side != 0)
    throw ConfigError("image side " + std::to_string(side) + " is not divisible by grid side " +
                      std::to_string(grid_side));
  if (side % spatial_divisor() != 0 || (side / grid_side) % spatial_divisor() != 0)
    throw ConfigError("image side " + std::to_string(side) + " and its patch side " +
                      std::to_string(side / grid_side) + " must both be multiples of 2^depth = " +
                      std::to_string(spatial_divisor()));
}

namespace {

nn::Sequential double_conv(int64_t in, int64_t out) {
  return nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(false)),
      nn::BatchNorm2d(out),
      nn::ReLU(nn::ReLUOptions().inplace(true)),
      nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)),
      nn::BatchNorm2d(out),
      nn::ReLU(nn::ReLUOptions().inplace(true)));
}

void check_backbone_input(const torch::Tensor& x, int64_t in_channels, int64_t divisor) {
  if (x.dim() != 4) throw ShapeError("backbone expects [B, C, H, W], got " + std::to_string(x.dim()) + " dims");
  if (x.size(1) != in_channels)
    throw ShapeError("backbone expects " + std::to_string(in_channels) + " input channels, got " +
                     std::to_string(x.size(1)));
  if (x.size(2) % divisor != 0)
    throw ShapeError("height " + std::to_string(x.size(2)) + " is not divisible by " + std::to_string(divisor));
  if (x.size(3) % divisor != 0)
    throw ShapeError("width " + std::to_string(x.size(3)) + " is not divisible by " + std::to_string(divisor));
}

}  // namespace

UNetBackbone::UNetBackbone(const ModelConfig& cfg)
    : in_channels_(cfg.in_channels), depth_(cfg.depth), out_channels_(cfg.feature_channels) {
  const auto b = cfg.base_channels;
  stem_ = register_module("stem", double_conv(cfg.in_channels, b));
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  merge_ = register_module("merge", nn::ModuleList());
  for (int64_t d = 0; d < depth_; ++d) down_->push_back(double_conv(b << d, b << (d + 1)));
  for (int64_t d = depth_; d > 0; --d) {
    const auto ch = b << d;
    up_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, ch / 2, 2).stride(2)));
    merge_->push_back(double_conv(ch, ch / 2));
  }
  out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(b, out_channels_, 1)));
}

torch::Tensor UNetBackbone::forward(const torch::Tensor& images) {
  check_backbone_input(images, in_channels_, spatial_divisor());
  std::vector<torch::Tensor> skips;
  skips.reserve(static_cast<size_t>(depth_));
  auto x = stem_->forward(images);
  for (int64_t d = 0; d < depth_; ++d) {
    skips.push_back(x);
    x = down_[d]->as<nn::Sequential>()->forward(torch::max_pool2d(x, 2));
  }
  for (int64_t k = 0; k < depth_; ++k) {
    x = up_[k]->as<nn::ConvTranspose2d>()->forward(x);
    x = merge_[k]->as<nn::Sequential>()->forward(torch::cat({skips[depth_ - 1 - k], x}, 1));
  }
  return out_->forward(x);
}

PointwiseBackbone::PointwiseBackbone(const ModelConfig& cfg) : in_channels_(cfg.in_channels), out_channels_(cfg.feature_channels) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(cfg.in_channels, out_channels_, 1)));
}

torch::Tensor PointwiseBackbone::forward(const torch::Tensor& images) {
  check_backbone_input(images, in_channels_, 1);
  return conv_->forward(images);
}

ProjectionHeadImpl::ProjectionHeadImpl(int64_t in_channels, int64_t embed_dim) {
  layers_ = register_module(
      "layers",
      nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, embed_dim, 1)),
                     nn::ReLU(),
                     nn::Conv2d(nn::Conv2dOptions(embed_dim, embed_dim, 1)),
                     nn::ReLU(),
                     nn::Conv2d(nn::Conv2dOptions(embed_dim, embed_dim, 1))));
}

torch::Tensor ProjectionHeadImpl::embed(const torch::Tensor& pooled) { return layers_->forward(pooled); }

torch::Tensor ProjectionHeadImpl::project_global_raw(const torch::Tensor& features, int64_t n) {
  if (features.dim() != 4) throw ShapeError("project_global expects [B, C, H, W]");
  check_grid_divisible(features, n);
  const auto bh = features.size(2) / n;
  const auto bw = features.size(3) / n;
  // Non-overlapping blocks: cell (r, c) only sees feature block (r, c).
  auto pooled = torch::avg_pool2d(features, {bh, bw}, {bh, bw});
  return embed(pooled);
}

torch::Tensor ProjectionHeadImpl::project_global(const torch::Tensor& features, int64_t n) {
  auto raw = project_global_raw(features, n);
  return torch::nn::functional::normalize(raw.permute({0, 2, 3, 1}),
                                          torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

torch::Tensor ProjectionHeadImpl::project_patch(const torch::Tensor& patch_features) {
  if (patch_features.dim() != 4) throw ShapeError("project_patch expects [P, C, h, w]");
  auto pooled = patch_features.mean({2, 3}, /*keepdim=*/true);
  auto raw = embed(pooled).flatten(1);
  return torch::nn::functional::normalize(raw, torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

PredictionHeadImpl::PredictionHeadImpl(int64_t in_channels) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, 2, 1)));
}

torch::Tensor PredictionHeadImpl::forward(const torch::Tensor& features) {
  if (features.dim() != 4) throw ShapeError("prediction head expects [B, C, H, W]");
  return conv_->forward(features);
}

SegmentationModelImpl::SegmentationModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.backbone == BackboneKind::UNet)
    backbone_ = register_module("backbone", std::make_shared<UNetBackbone>(cfg_));
  else
    backbone_ = register_module("backbone", std::make_shared<PointwiseBackbone>(cfg_));
  projector_ = register_module("projector", ProjectionHead(cfg_.feature_channels, cfg_.embed_dim));
  predictor_ = register_module("predictor", PredictionHead(cfg_.feature_channels));
}

torch::Tensor SegmentationModelImpl::features(const torch::Tensor& images) { return backbone_->forward(images); }

torch::Tensor SegmentationModelImpl::project_global(const torch::Tensor& features) {
  return projector_->project_global(features, cfg_.grid_side);
}

torch::Tensor SegmentationModelImpl::project_patch(const torch::Tensor& patch_features) {
  return projector_->project_patch(patch_features);
}

torch::Tensor SegmentationModelImpl::predict(const torch::Tensor& features) { return predictor_->forward(features); }

torch::Tensor SegmentationModelImpl::foreground_probability(const torch::Tensor& images) {
  return torch::softmax(predict(features(images)), 1).select(1, 1);
}

}  // namespace clcc
