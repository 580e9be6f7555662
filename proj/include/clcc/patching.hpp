#pragma once

// Row-major n x n patch grid over the last two (spatial) axes of a tensor.
// Patch index i = r * n + c covers rows [r*H/n, (r+1)*H/n) and columns
// [c*W/n, (c+1)*W/n). Every pairing of a global block with a patch in this
// project goes through these functions.

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

namespace clcc {

struct PatchSet {
  std::vector<torch::Tensor> patches;  // n*n tensors [..., H/n, W/n]
  int64_t n = 0;
  std::pair<int64_t, int64_t> origin_hw{0, 0};
};

/// Throws ShapeError naming the axis when H or W is not a multiple of n.
void check_grid_divisible(const torch::Tensor& t, int64_t n);

/// Splits an image [C, H, W] (or any [..., H, W]) into n*n tiles.
PatchSet decompose_image(const torch::Tensor& image, int64_t n);

/// The region of `map` spatially congruent to patch i.
torch::Tensor crop_aligned(const torch::Tensor& map, int64_t i, int64_t n);

/// Inverse of decompose_image / crop_aligned.
torch::Tensor reassemble(const std::vector<torch::Tensor>& parts, int64_t n);
torch::Tensor reassemble(const PatchSet& set);

/// Batched decomposition: [B, C, H, W] -> [B*n*n, C, H/n, W/n], image-major
/// then row-major patch order. Used for the single batched patch forward.
torch::Tensor to_patch_batch(const torch::Tensor& batch, int64_t n);

/// Inverse of to_patch_batch.
torch::Tensor from_patch_batch(const torch::Tensor& patches, int64_t n);

}  // namespace clcc
