#include <doctest.h>

#include "clcc/errors.hpp"
#include "clcc/patching.hpp"

using namespace clcc;

TEST_CASE("decompose_image splits 320x320 into 16 patches of 80x80") {
  auto img = torch::rand({3, 320, 320});
  auto set = decompose_image(img, 4);
  REQUIRE(set.patches.size() == 16);
  CHECK(set.origin_hw == std::pair<int64_t, int64_t>{320, 320});
  for (const auto& p : set.patches) CHECK(p.sizes() == torch::IntArrayRef({3, 80, 80}));
  CHECK(torch::equal(set.patches[0], img.slice(1, 0, 80).slice(2, 0, 80)));
  // i = r*n + c: patch 6 is row 1, column 2
  CHECK(torch::equal(set.patches[6], img.slice(1, 80, 160).slice(2, 160, 240)));
}

TEST_CASE("decompose_image rejects indivisible sides and names the axis") {
  CHECK_THROWS_WITH_AS(decompose_image(torch::rand({3, 321, 320}), 4), doctest::Contains("height"), ShapeError);
  CHECK_THROWS_WITH_AS(decompose_image(torch::rand({3, 320, 321}), 4), doctest::Contains("width"), ShapeError);
}

TEST_CASE("reassemble inverts decompose bit-exactly for random shapes") {
  torch::manual_seed(3);
  for (int64_t n : {2, 4, 5}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto h = n * (1 + trial), w = n * (2 + trial);
      auto img = torch::randn({3, h, w});
      CHECK(torch::equal(reassemble(decompose_image(img, n)), img));
    }
  }
}

TEST_CASE("crop_aligned follows the row-major convention") {
  auto map = torch::arange(2 * 8 * 8, torch::kFloat32).view({2, 8, 8});
  CHECK(torch::equal(crop_aligned(map, 0, 4), map.slice(1, 0, 2).slice(2, 0, 2)));
  auto set = decompose_image(map, 4);
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 4; ++c) CHECK(torch::equal(crop_aligned(map, r * 4 + c, 4), set.patches[r * 4 + c]));

  auto constant = torch::full({2, 8, 8}, 0.25);
  for (int64_t i = 0; i < 16; ++i) CHECK(torch::equal(crop_aligned(constant, i, 4), torch::full({2, 2, 2}, 0.25)));

  std::vector<torch::Tensor> crops;
  for (int64_t i = 0; i < 16; ++i) crops.push_back(crop_aligned(map, i, 4));
  CHECK(torch::equal(reassemble(crops, 4), map));

  CHECK_THROWS_AS(crop_aligned(map, 16, 4), std::out_of_range);
  CHECK_THROWS_AS(crop_aligned(map, -1, 4), std::out_of_range);
}

TEST_CASE("reassemble validates part count and shapes") {
  std::vector<torch::Tensor> parts(16, torch::full({3, 5, 5}, 2.0));
  CHECK(torch::equal(reassemble(parts, 4), torch::full({3, 20, 20}, 2.0)));
  parts.pop_back();
  CHECK_THROWS_AS(reassemble(parts, 4), ShapeError);
  parts.push_back(torch::zeros({3, 5, 6}));
  CHECK_THROWS_AS(reassemble(parts, 4), ShapeError);
}

TEST_CASE("batched patch layout matches per-image decomposition") {
  auto batch = torch::randn({3, 2, 12, 12});
  auto patches = to_patch_batch(batch, 3);
  REQUIRE(patches.sizes() == torch::IntArrayRef({27, 2, 4, 4}));
  for (int64_t b = 0; b < 3; ++b) {
    auto set = decompose_image(batch[b], 3);
    for (int64_t i = 0; i < 9; ++i) CHECK(torch::equal(patches[b * 9 + i], set.patches[static_cast<size_t>(i)]));
  }
  CHECK(torch::equal(from_patch_batch(patches, 3), batch));
  CHECK_THROWS_AS(from_patch_batch(patches.slice(0, 0, 26), 3), ShapeError);
}
