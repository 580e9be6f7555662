#pragma once

// Differentiable objectives. All functions accept float or double tensors and
// keep the autograd graph intact with respect to every input.

#include <torch/torch.h>

#include <cstdint>
#include <optional>

namespace clcc {

struct LossWeights {
  double alpha = 1.0;  // contrastive
  double beta = 0.0;   // consistency
  double tau = 0.1;    // temperature

  void validate() const;
};

inline constexpr double kDiceSmooth = 1e-5;

/// Cross-level InfoNCE.
///
/// `grid` is [B, n, n, D] (or [B, N, D]) and `patch_vectors` is [B, N, D] with
/// N = n*n in row-major order. For anchor i of image b the positive logit is
/// grid_i . patch_i / tau and the negatives are grid_i . grid_m / tau for
/// every other cell m of the same image. Returns the mean over anchors and
/// images of -log softmax(positive).
///
/// When `negatives` is set and smaller than N-1, each anchor keeps only that
/// many randomly chosen negatives (drawn from `generator`).
torch::Tensor contrastive_loss(const torch::Tensor& grid,
                               const torch::Tensor& patch_vectors,
                               double tau,
                               std::optional<int64_t> negatives = std::nullopt,
                               std::optional<at::Generator> generator = std::nullopt);

/// Mean squared difference between softmax(patch logits) and softmax of the
/// aligned crops of the global logits, over patches, channels and pixels.
/// `global_logits` is [B, 2, H, W]; `patch_logits` is [B*n*n, 2, H/n, W/n] in
/// the order produced by to_patch_batch.
torch::Tensor consistency_loss(const torch::Tensor& global_logits, const torch::Tensor& patch_logits, int64_t n);

/// 1 - (2 sum(p*y) + eps) / (sum p + sum y + eps) per image on the foreground
/// probability, averaged over the batch. `mask` is [B, H, W] in {0, 1}.
torch::Tensor dice_loss(const torch::Tensor& logits, const torch::Tensor& mask);

/// Mean per-pixel two-class cross entropy. Throws if mask leaves {0, 1}.
torch::Tensor ce_loss(const torch::Tensor& logits, const torch::Tensor& mask);

/// (dice + ce) / 2
torch::Tensor supervised_loss(const torch::Tensor& logits, const torch::Tensor& mask);

/// sup + alpha * contrast + beta * consist. An undefined tensor marks a term
/// that was skipped; it contributes nothing, and is only allowed with a zero
/// weight. Throws TrainingError naming the first non-finite term.
torch::Tensor total_loss(const torch::Tensor& sup,
                         const torch::Tensor& contrast,
                         const torch::Tensor& consist,
                         const LossWeights& w);

double total_loss(double sup, double contrast, double consist, const LossWeights& w);

}  // namespace clcc
