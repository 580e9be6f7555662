#include "clcc/patching.hpp"

#include "clcc/errors.hpp"

#include <string>

namespace clcc {

void check_grid_divisible(const torch::Tensor& t, int64_t n) {
  if (n <= 0) throw ShapeError("patch grid side must be positive, got " + std::to_string(n));
  if (t.dim() < 2) throw ShapeError("expected a tensor with two spatial axes");
  const auto h = t.size(-2);
  const auto w = t.size(-1);
  if (h % n != 0)
    throw ShapeError("height " + std::to_string(h) + " is not divisible by grid side " + std::to_string(n));
  if (w % n != 0)
    throw ShapeError("width " + std::to_string(w) + " is not divisible by grid side " + std::to_string(n));
}

torch::Tensor crop_aligned(const torch::Tensor& map, int64_t i, int64_t n) {
  check_grid_divisible(map, n);
  if (i < 0 || i >= n * n)
    throw std::out_of_range("patch index " + std::to_string(i) + " outside [0, " + std::to_string(n * n) + ")");
  const auto ph = map.size(-2) / n;
  const auto pw = map.size(-1) / n;
  const auto r = i / n;
  const auto c = i % n;
  return map.slice(-2, r * ph, (r + 1) * ph).slice(-1, c * pw, (c + 1) * pw);
}

PatchSet decompose_image(const torch::Tensor& image, int64_t n) {
  check_grid_divisible(image, n);
  PatchSet set;
  set.n = n;
  set.origin_hw = {image.size(-2), image.size(-1)};
  set.patches.reserve(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n * n; ++i) set.patches.push_back(crop_aligned(image, i, n).clone());
  return set;
}

torch::Tensor reassemble(const std::vector<torch::Tensor>& parts, int64_t n) {
  if (n <= 0) throw ShapeError("patch grid side must be positive");
  if (static_cast<int64_t>(parts.size()) != n * n)
    throw ShapeError("reassemble expects " + std::to_string(n * n) + " parts, got " + std::to_string(parts.size()));
  const auto ref = parts.front().sizes();
  if (ref.size() < 2) throw ShapeError("parts need two spatial axes");
  for (const auto& p : parts)
    if (p.sizes() != ref) throw ShapeError("reassemble parts differ in shape");

  std::vector<torch::Tensor> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    std::vector<torch::Tensor> row(parts.begin() + r * n, parts.begin() + (r + 1) * n);
    rows.push_back(torch::cat(row, -1));
  }
  return torch::cat(rows, -2);
}

torch::Tensor reassemble(const PatchSet& set) { return reassemble(set.patches, set.n); }

torch::Tensor to_patch_batch(const torch::Tensor& batch, int64_t n) {
  if (batch.dim() != 4) throw ShapeError("to_patch_batch expects [B, C, H, W]");
  check_grid_divisible(batch, n);
  const auto b = batch.size(0), c = batch.size(1);
  const auto ph = batch.size(2) / n, pw = batch.size(3) / n;
  return batch.reshape({b, c, n, ph, n, pw})
      .permute({0, 2, 4, 1, 3, 5})
      .reshape({b * n * n, c, ph, pw});
}

torch::Tensor from_patch_batch(const torch::Tensor& patches, int64_t n) {
  if (patches.dim() != 4) throw ShapeError("from_patch_batch expects [B*n*n, C, h, w]");
  if (n <= 0 || patches.size(0) % (n * n) != 0)
    throw ShapeError("patch count " + std::to_string(patches.size(0)) + " is not a multiple of n*n");
  const auto b = patches.size(0) / (n * n), c = patches.size(1);
  const auto ph = patches.size(2), pw = patches.size(3);
  return patches.reshape({b, n, n, c, ph, pw})
      .permute({0, 3, 1, 4, 2, 5})
      .reshape({b, c, n * ph, n * pw});
}

}  // namespace clcc
