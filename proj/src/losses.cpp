#include "clcc/losses.hpp"

#include "clcc/errors.hpp"
#include "clcc/patching.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace clcc {

void LossWeights::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("loss.tau must be positive and finite");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and non-negative");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and non-negative");
}

torch::Tensor contrastive_loss(const torch::Tensor& grid,
                               const torch::Tensor& patch_vectors,
                               double tau,
                               std::optional<int64_t> negatives,
                               std::optional<at::Generator> generator) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  if (grid.dim() != 3 && grid.dim() != 4) throw ShapeError("contrastive_loss: grid must be [B, n, n, D] or [B, N, D]");
  const auto b = grid.size(0);
  const auto d = grid.size(-1);
  const auto anchors = grid.reshape({b, -1, d});
  const auto cells = anchors.size(1);
  if (patch_vectors.dim() != 3 || patch_vectors.size(0) != b || patch_vectors.size(1) != cells ||
      patch_vectors.size(2) != d)
    throw ShapeError("contrastive_loss: expected " + std::to_string(cells) + " patch vectors of dim " +
                     std::to_string(d) + " per image");
  if (cells < 2) throw ShapeError("contrastive_loss: need at least two cells for negatives");

  auto positive = (anchors * patch_vectors).sum(-1, /*keepdim=*/true) / tau;      // [B, N, 1]
  auto similarity = torch::matmul(anchors, anchors.transpose(1, 2)) / tau;       // [B, N, N]

  auto excluded = torch::eye(cells, torch::TensorOptions().dtype(torch::kBool).device(grid.device()))
                      .unsqueeze(0)
                      .expand({b, cells, cells});
  if (negatives && *negatives > 0 && *negatives < cells - 1) {
    // Keep the top-k of random scores among off-diagonal entries.
    auto scores = torch::rand({b, cells, cells}, generator, torch::TensorOptions().device(grid.device()));
    scores = scores.masked_fill(excluded, -1.0);
    auto keep_idx = std::get<1>(scores.topk(*negatives, -1));
    auto keep = torch::zeros({b, cells, cells}, torch::TensorOptions().dtype(torch::kBool).device(grid.device()))
                    .scatter(-1, keep_idx, true);
    excluded = keep.logical_not();
  }
  similarity = similarity.masked_fill(excluded, -std::numeric_limits<double>::infinity());

  auto logits = torch::cat({positive, similarity}, -1);  // positive is class 0
  return -torch::log_softmax(logits, -1).select(-1, 0).mean();
}

torch::Tensor consistency_loss(const torch::Tensor& global_logits, const torch::Tensor& patch_logits, int64_t n) {
  if (global_logits.dim() != 4) throw ShapeError("consistency_loss: global logits must be [B, 2, H, W]");
  check_grid_divisible(global_logits, n);
  const auto b = global_logits.size(0);
  const auto expected = std::vector<int64_t>{b * n * n, global_logits.size(1), global_logits.size(2) / n,
                                             global_logits.size(3) / n};
  if (patch_logits.sizes() != c10::IntArrayRef(expected))
    throw ShapeError("consistency_loss: patch logits have shape " + c10::str(patch_logits.sizes()) + ", expected " +
                     c10::str(c10::IntArrayRef(expected)));
  auto global_prob = to_patch_batch(torch::softmax(global_logits, 1), n);
  auto patch_prob = torch::softmax(patch_logits, 1);
  return (patch_prob - global_prob).pow(2).mean();
}

namespace {

void check_pred_mask(const torch::Tensor& logits, const torch::Tensor& mask, const char* who) {
  if (logits.dim() != 4 || logits.size(1) != 2)
    throw ShapeError(std::string(who) + ": logits must be [B, 2, H, W], got " + c10::str(logits.sizes()));
  if (mask.dim() != 3 || mask.size(0) != logits.size(0) || mask.size(1) != logits.size(2) ||
      mask.size(2) != logits.size(3))
    throw ShapeError(std::string(who) + ": mask shape " + c10::str(mask.sizes()) + " does not match logits " +
                     c10::str(logits.sizes()));
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  check_pred_mask(logits, mask, "dice_loss");
  auto fg = torch::softmax(logits, 1).select(1, 1).flatten(1);
  auto y = mask.to(fg.scalar_type()).flatten(1);
  auto inter = (fg * y).sum(1);
  auto denom = fg.sum(1) + y.sum(1);
  return (1.0 - (2.0 * inter + kDiceSmooth) / (denom + kDiceSmooth)).mean();
}

torch::Tensor ce_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  check_pred_mask(logits, mask, "ce_loss");
  auto binary = mask.eq(0).logical_or(mask.eq(1));
  if (!binary.all().item<bool>()) throw std::invalid_argument("ce_loss: mask values must be 0 or 1");
  auto log_prob = torch::log_softmax(logits, 1);
  auto y = mask.to(log_prob.scalar_type());
  return -(y * log_prob.select(1, 1) + (1.0 - y) * log_prob.select(1, 0)).mean();
}

torch::Tensor supervised_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  return 0.5 * (dice_loss(logits, mask) + ce_loss(logits, mask));
}

namespace {

void require_finite(const torch::Tensor& t, const char* name) {
  if (t.defined() && !torch::isfinite(t).all().item<bool>())
    throw TrainingError(std::string("non-finite ") + name + " loss: " + c10::str(t.detach().cpu()));
}

}  // namespace

torch::Tensor total_loss(const torch::Tensor& sup,
                         const torch::Tensor& contrast,
                         const torch::Tensor& consist,
                         const LossWeights& w) {
  w.validate();
  require_finite(sup, "supervised");
  require_finite(contrast, "contrastive");
  require_finite(consist, "consistency");
  if (!contrast.defined() && w.alpha != 0.0) throw std::invalid_argument("contrastive term skipped with alpha != 0");
  if (!consist.defined() && w.beta != 0.0) throw std::invalid_argument("consistency term skipped with beta != 0");

  torch::Tensor total = sup.defined() ? sup : torch::Tensor();
  auto add = [&total](const torch::Tensor& t) { total = total.defined() ? total + t : t; };
  if (contrast.defined() && w.alpha != 0.0) add(w.alpha * contrast);
  if (consist.defined() && w.beta != 0.0) add(w.beta * consist);
  if (!total.defined()) total = torch::zeros({});
  return total;
}

double total_loss(double sup, double contrast, double consist, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(sup)) throw TrainingError("non-finite supervised loss");
  if (!std::isfinite(contrast)) throw TrainingError("non-finite contrastive loss");
  if (!std::isfinite(consist)) throw TrainingError("non-finite consistency loss");
  return sup + w.alpha * contrast + w.beta * consist;
}

}  // namespace clcc
