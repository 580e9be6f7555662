#include <doctest.h>

#include "clcc/errors.hpp"
#include "clcc/losses.hpp"
#include "clcc/model.hpp"
#include "clcc/patching.hpp"

using namespace clcc;

namespace {

ModelConfig pointwise_config() {
  auto cfg = ModelConfig::desk();
  cfg.backbone = BackboneKind::Pointwise;
  return cfg;
}

torch::Tensor row_norms(const torch::Tensor& t) { return t.norm(2, -1); }

}  // namespace

TEST_CASE("desk backbone keeps spatial resolution and rejects indivisible input") {
  torch::manual_seed(0);
  SegmentationModel model(ModelConfig::desk());
  model->eval();
  torch::NoGradGuard no_grad;
  auto f = model->features(torch::rand({2, 3, 64, 64}));
  CHECK(f.sizes() == torch::IntArrayRef({2, 16, 64, 64}));
  CHECK(torch::isfinite(model->features(torch::zeros({1, 3, 64, 64}))).all().item<bool>());
  CHECK_THROWS_WITH_AS(model->features(torch::rand({1, 3, 60, 64})), doctest::Contains("height"), ShapeError);
  CHECK_THROWS_WITH_AS(model->features(torch::rand({1, 3, 64, 68})), doctest::Contains("width"), ShapeError);
}

TEST_CASE("default backbone maps 320x320 to a full-resolution feature map") {
  torch::manual_seed(0);
  SegmentationModel model(ModelConfig{});
  model->eval();
  torch::NoGradGuard no_grad;
  auto f = model->features(torch::rand({1, 3, 320, 320}));
  CHECK(f.sizes() == torch::IntArrayRef({1, 16, 320, 320}));
  auto grid = model->project_global(f);
  CHECK(grid.sizes() == torch::IntArrayRef({1, 4, 4, 128}));
  CHECK(torch::allclose(row_norms(grid), torch::ones({1, 4, 4}), 0, 1e-6));
  CHECK_THROWS_AS(model->projector()->project_global(f, 7), ShapeError);
}

TEST_CASE("input side validation covers patches as well as full images") {
  auto cfg = ModelConfig::desk();
  CHECK_NOTHROW(cfg.validate_input_side(64));
  CHECK_THROWS_AS(cfg.validate_input_side(321), ConfigError);
  CHECK_THROWS_AS(cfg.validate_input_side(36), ConfigError);  // 36/4 = 9 is not a multiple of 8
  cfg.depth = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("projection head output is unit norm and block-local") {
  torch::manual_seed(1);
  ProjectionHead head(16, 16);
  auto fm = torch::randn({1, 16, 32, 32});
  auto grid = head->project_global(fm, 4);
  CHECK(grid.sizes() == torch::IntArrayRef({1, 4, 4, 16}));
  CHECK(torch::allclose(row_norms(grid), torch::ones({1, 4, 4}), 0, 1e-6));

  auto constant = torch::randn({1, 16, 1, 1}).expand({1, 16, 32, 32}).contiguous();
  auto cgrid = head->project_global(constant, 4).view({16, 16});
  for (int64_t i = 1; i < 16; ++i) CHECK(torch::allclose(cgrid[i], cgrid[0], 0, 1e-6));

  auto vec = head->project_patch(torch::randn({3, 16, 8, 8}));
  CHECK(vec.sizes() == torch::IntArrayRef({3, 16}));
  CHECK(torch::allclose(row_norms(vec), torch::ones({3}), 0, 1e-6));

  // Zeroing feature block (r, c) changes only raw cell (r, c).
  auto raw = head->project_global_raw(fm, 4);
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 4; ++c) {
      auto zeroed = fm.clone();
      zeroed.slice(2, r * 8, (r + 1) * 8).slice(3, c * 8, (c + 1) * 8).zero_();
      auto changed = (head->project_global_raw(zeroed, 4) - raw).abs().amax(1)[0].gt(0);
      auto expected = torch::zeros({4, 4}, torch::kBool);
      expected[r][c] = true;
      CHECK(torch::equal(changed, expected));
    }
}

TEST_CASE("one projection and one prediction parameter set serve both levels") {
  torch::manual_seed(2);
  SegmentationModel model(ModelConfig::desk());
  CHECK(model->projector()->parameters().size() == 6);    // three 1x1 convs
  CHECK(model->predictor()->parameters().size() == 2);    // one 1x1 conv
  auto images = torch::rand({1, 3, 64, 64});

  // Gradients from each path land on the same head tensors.
  auto w = model->projector()->parameters()[0];
  model->zero_grad();
  model->project_patch(model->features(to_patch_batch(images, 4))).sum().backward();
  CHECK(w.grad().abs().sum().item<double>() > 0);
  model->zero_grad();
  model->project_global(model->features(images)).sum().backward();
  CHECK(w.grad().abs().sum().item<double>() > 0);
  CHECK(model->parameters().size() ==
        model->backbone().parameters().size() + model->projector()->parameters().size() +
            model->predictor()->parameters().size());
}

TEST_CASE("prediction head is a 1x1 map to two classes") {
  torch::manual_seed(3);
  PredictionHead head(16);
  auto fm = torch::randn({1, 16, 20, 20});
  auto logits = head->forward(fm);
  CHECK(logits.sizes() == torch::IntArrayRef({1, 2, 20, 20}));
  CHECK(torch::allclose(torch::softmax(logits, 1).sum(1), torch::ones({1, 20, 20}), 0, 1e-6));

  auto swapped = fm.clone();
  swapped.select(2, 3).select(2, 5).copy_(fm.select(2, 11).select(2, 17));
  swapped.select(2, 11).select(2, 17).copy_(fm.select(2, 3).select(2, 5));
  auto out = head->forward(swapped);
  CHECK(torch::allclose(out.select(2, 3).select(2, 5), logits.select(2, 11).select(2, 17)));
  CHECK(torch::allclose(out.select(2, 11).select(2, 17), logits.select(2, 3).select(2, 5)));
  auto untouched = torch::ones({20, 20}, torch::kBool);
  untouched[3][5] = false;
  untouched[11][17] = false;
  CHECK(torch::equal(out.permute({0, 2, 3, 1})[0].index({untouched}), logits.permute({0, 2, 3, 1})[0].index({untouched})));
}

TEST_CASE("pointwise stub makes patch and global paths agree") {
  torch::manual_seed(4);
  SegmentationModel model(pointwise_config());
  model->eval();
  torch::NoGradGuard no_grad;
  for (int trial = 0; trial < 3; ++trial) {
    auto image = torch::rand({1, 3, 64, 64});
    auto f = model->features(image);
    auto grid = model->project_global(f).view({16, -1});
    auto set = decompose_image(image[0], 4);
    for (int64_t i = 0; i < 16; ++i) {
      auto pf = model->features(set.patches[static_cast<size_t>(i)].unsqueeze(0));
      CHECK(torch::allclose(model->project_patch(pf)[0], grid[i], 0, 1e-5));
      CHECK(torch::allclose(model->predict(pf), crop_aligned(model->predict(f), i, 4), 0, 1e-6));
    }
  }
}

TEST_CASE("identical patches give identical embeddings and eval mode is deterministic") {
  torch::manual_seed(5);
  SegmentationModel model(ModelConfig::desk());
  model->eval();
  torch::NoGradGuard no_grad;
  auto patch = torch::rand({1, 3, 16, 16});
  auto a = model->project_patch(model->features(patch));
  auto b = model->project_patch(model->features(patch.clone()));
  CHECK(torch::equal(a, b));

  auto images = torch::rand({2, 3, 64, 64});
  CHECK(torch::equal(model->foreground_probability(images), model->foreground_probability(images)));

  // One batched patch forward equals per-patch forwards in eval mode.
  auto batched = model->features(to_patch_batch(images, 4));
  for (int64_t k = 0; k < batched.size(0); k += 5) {
    auto single = model->features(to_patch_batch(images, 4)[k].unsqueeze(0));
    CHECK(torch::allclose(batched[k], single[0], 1e-5, 1e-5));
  }
}
