#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace clcc {

/// One image with its ground truth. `image` is float [3, H, W] in [0, 1] and
/// `mask` is float [H, W] in {0, 1}. Unlabeled training samples carry no
/// `mask`; their ground truth (when known) is parked in `audit_mask`, which
/// the training loop never reads.
struct Sample {
  std::string id;
  torch::Tensor image;
  std::optional<torch::Tensor> mask;
  std::optional<torch::Tensor> audit_mask;

  bool labeled() const { return mask.has_value(); }
  int64_t height() const { return image.size(1); }
  int64_t width() const { return image.size(2); }
};

struct SplitSpec {
  uint64_t seed = 0;        // train/val/test partition
  uint64_t label_seed = 0;  // labeled subset of train
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  double labeled_fraction = 0.2;

  void validate() const;
};

struct Splits {
  std::vector<Sample> train_labeled;
  std::vector<Sample> train_unlabeled;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// Reads root/images/<id>.<ext> paired with root/masks/<id>.<ext>. Mask
/// pixels above 127 become foreground. Result is sorted by id.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

/// Writes PNGs in the layout load_dataset reads. Samples without any mask are
/// written image-only.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& root);

/// Reads a single RGB image file as [3, H, W] in [0, 1]. Throws DataError.
torch::Tensor read_image(const std::filesystem::path& path);
/// Writes [3, H, W] in [0, 1] or [H, W] in [0, 1] as an 8-bit image.
void write_image(const torch::Tensor& image, const std::filesystem::path& path);

/// Deterministic partition. Unlabeled train samples have their mask moved to
/// audit_mask.
Splits make_splits(const std::vector<Sample>& samples, const SplitSpec& spec);

/// Moves mask into audit_mask.
Sample strip_label(Sample s);

/// Split manifest: JSON listing ids per partition plus the spec that made it.
std::string split_manifest(const Splits& splits, const SplitSpec& spec);
void write_split_manifest(const Splits& splits, const SplitSpec& spec, const std::filesystem::path& path);
/// Rebuilds the partitions named in a manifest from a sample list.
Splits read_split_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

/// Bilinear resize of the image and nearest-neighbour resize of the masks.
Sample resize_sample(const Sample& s, int64_t side);

/// Flips image and any masks together.
Sample flip_sample(const Sample& s, bool horizontal, bool vertical);
/// Random horizontal/vertical flips, each with probability 1/2.
Sample augment_sample(const Sample& s, std::mt19937_64& rng);

/// Textured background with 1-3 smooth blobs of a different colour and
/// texture; mask is the blob union with foreground fraction in [0.05, 0.5].
std::vector<Sample> generate_synthetic(uint64_t seed, int64_t count, int64_t side);

/// Stacks images [B, 3, H, W] and (for labeled samples) masks [B, H, W].
torch::Tensor stack_images(const std::vector<const Sample*>& samples);
torch::Tensor stack_masks(const std::vector<const Sample*>& samples);

}  // namespace clcc
