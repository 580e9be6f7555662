#include <doctest.h>

#include "clcc/checkpoint.hpp"
#include "clcc/errors.hpp"
#include "clcc/training.hpp"
#include "temp_dir.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

using namespace clcc;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.model = ModelConfig::desk();
  cfg.image_side = 32;
  cfg.total_epochs = 3;
  cfg.stage1_epochs = 1;
  cfg.seed = 3;
  return cfg;
}

Splits small_splits(int count = 20) {
  SplitSpec spec;
  spec.labeled_fraction = 0.5;
  return make_splits(generate_synthetic(5, count, 32), spec);
}

std::vector<nlohmann::json> read_log(const std::filesystem::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("loss schedule has exactly two stages") {
  TrainConfig cfg;
  auto w0 = loss_schedule(0, cfg);
  CHECK(w0.alpha == 1.0);
  CHECK(w0.beta == 0.0);
  CHECK(loss_schedule(99, cfg).alpha == 1.0);
  auto w100 = loss_schedule(100, cfg);
  CHECK(w100.alpha == 0.0);
  CHECK(w100.beta == 1.0);
  CHECK(loss_schedule(299, cfg).beta == 1.0);
  CHECK_THROWS_AS(loss_schedule(300, cfg), std::out_of_range);
  CHECK_THROWS_AS(loss_schedule(-1, cfg), std::out_of_range);
}

TEST_CASE("batch composition mixes pools without early repeats") {
  auto samples = generate_synthetic(1, 20, 32);
  std::vector<Sample> labeled(samples.begin(), samples.begin() + 12);
  std::vector<Sample> unlabeled;
  for (size_t i = 12; i < samples.size(); ++i) unlabeled.push_back(strip_label(samples[i]));

  BatchComposer composer(labeled, unlabeled, 4, 4, 9);
  CHECK(composer.steps_per_epoch() == 2);
  auto first = composer.next();
  CHECK(first.size() == 8);
  CHECK(first.labeled.size() == 4);
  for (const auto& s : first.labeled) CHECK(s.mask.has_value());
  for (const auto& s : first.unlabeled) CHECK_FALSE(s.mask.has_value());

  std::set<std::string> seen;
  for (const auto& s : first.labeled) seen.insert(s.id);
  for (int k = 0; k < 2; ++k)
    for (const auto& s : composer.next().labeled) CHECK(seen.insert(s.id).second);
  CHECK(seen.size() == 12);

  BatchComposer a(labeled, unlabeled, 4, 4, 9), b(labeled, unlabeled, 4, 4, 9);
  for (int epoch = 0; epoch < 2; ++epoch) {
    a.start_epoch(epoch);
    b.start_epoch(epoch);
    for (int k = 0; k < 3; ++k) CHECK(a.next().ids() == b.next().ids());
  }

  std::vector<Sample> empty;
  CHECK_THROWS_AS(BatchComposer(empty, unlabeled, 4, 4, 0), DataError);
}

TEST_CASE("epoch-defining pool ends with a short batch") {
  auto samples = generate_synthetic(1, 14, 32);
  std::vector<Sample> labeled(samples.begin(), samples.begin() + 4);
  std::vector<Sample> unlabeled;
  for (size_t i = 4; i < samples.size(); ++i) unlabeled.push_back(strip_label(samples[i]));
  BatchComposer composer(labeled, unlabeled, 4, 4, 2);
  CHECK(composer.steps_per_epoch() == 3);
  composer.next();
  composer.next();
  auto last = composer.next();
  CHECK(last.unlabeled.size() == 2);
  CHECK(last.labeled.size() == 4);
}

TEST_CASE("train_step skips zero-weight terms") {
  auto splits = small_splits();
  Batch batch{{splits.train_labeled.begin(), splits.train_labeled.begin() + 2},
              {splits.train_unlabeled.begin(), splits.train_unlabeled.begin() + 2}};
  torch::manual_seed(0);
  SegmentationModel model(ModelConfig::desk());
  auto opt = make_optimizer(*model, small_config());

  auto s1 = train_step(*model, batch, {1.0, 0.0, 0.1}, *opt);
  CHECK(s1.sup.has_value());
  REQUIRE(s1.contrast.has_value());
  CHECK(std::isfinite(*s1.contrast));
  CHECK_FALSE(s1.consist.has_value());
  CHECK(s1.updated);

  auto s2 = train_step(*model, batch, {0.0, 1.0, 0.1}, *opt);
  CHECK_FALSE(s2.contrast.has_value());
  CHECK(s2.consist.has_value());

  auto s0 = train_step(*model, batch, {0.0, 0.0, 0.1}, *opt);
  CHECK_FALSE(s0.contrast.has_value());
  CHECK_FALSE(s0.consist.has_value());
  CHECK(s0.total == doctest::Approx(*s0.sup));

  Batch unlabeled_only{{}, batch.unlabeled};
  auto su = train_step(*model, unlabeled_only, {1.0, 0.0, 0.1}, *opt);
  CHECK_FALSE(su.sup.has_value());
  CHECK(su.total == doctest::Approx(*su.contrast));
}

TEST_CASE("supervised loss ignores unlabeled images") {
  auto splits = small_splits();
  Batch batch{{splits.train_labeled.begin(), splits.train_labeled.begin() + 2},
              {splits.train_unlabeled.begin(), splits.train_unlabeled.begin() + 2}};
  Batch zeroed = batch;
  for (auto& s : zeroed.unlabeled) s.image = torch::zeros_like(s.image);

  auto run = [](const Batch& b) {
    torch::manual_seed(1);
    SegmentationModel model(ModelConfig::desk());
    auto opt = make_optimizer(*model, small_config());
    return train_step(*model, b, {1.0, 0.0, 0.1}, *opt);
  };
  auto a = run(batch);
  auto z = run(zeroed);
  CHECK(*a.sup == *z.sup);
  CHECK(*a.contrast != *z.contrast);
}

TEST_CASE("a step on a frozen batch usually lowers its loss") {
  auto splits = small_splits();
  Batch batch{{splits.train_labeled.begin(), splits.train_labeled.begin() + 2},
              {splits.train_unlabeled.begin(), splits.train_unlabeled.begin() + 2}};
  auto cfg = small_config();
  cfg.lr = 1e-4;
  int descended = 0;
  for (int trial = 0; trial < 20; ++trial) {
    torch::manual_seed(100 + trial);
    SegmentationModel model(ModelConfig::desk());
    auto opt = make_optimizer(*model, cfg);
    const auto before = train_step(*model, batch, {1.0, 0.0, 0.1}, *opt).total;
    const auto after = train_step(*model, batch, {1.0, 0.0, 0.1}, *opt).total;
    descended += after <= before;
  }
  CHECK(descended > 10);
}

TEST_CASE("non-finite loss aborts with the batch ids") {
  auto splits = small_splits();
  Batch batch{{splits.train_labeled.front()}, {}};
  batch.labeled[0].image = torch::full_like(batch.labeled[0].image, std::nan(""));
  torch::manual_seed(0);
  SegmentationModel model(ModelConfig::desk());
  auto opt = make_optimizer(*model, small_config());
  CHECK_THROWS_WITH_AS(train_step(*model, batch, {0.0, 0.0, 0.1}, *opt),
                       doctest::Contains(batch.labeled[0].id.c_str()), TrainingError);
}

TEST_CASE("smoke run writes checkpoints and a two-stage log") {
  TempDir dir;
  auto splits = small_splits();
  auto cfg = small_config();
  auto result = run_training(cfg, splits, dir.path());
  CHECK(std::filesystem::exists(result.best_checkpoint));
  CHECK(std::filesystem::exists(result.last_checkpoint));
  auto log = read_log(dir.path() / "train_log.jsonl");
  REQUIRE(log.size() == 3);
  CHECK(log[0]["alpha"] == 1.0);
  CHECK(log[0]["beta"] == 0.0);
  CHECK(log[0]["consist"].is_null());
  for (size_t e = 1; e < 3; ++e) {
    CHECK(log[e]["alpha"] == 0.0);
    CHECK(log[e]["beta"] == 1.0);
    CHECK(log[e]["contrast"].is_null());
  }

  // The best checkpoint reproduces its logged validation metrics.
  auto loaded = load_checkpoint(result.best_checkpoint);
  CHECK(loaded.image_side == 32);
  auto report = evaluate_model(*loaded.model, splits.val);
  const auto& best = log[static_cast<size_t>(loaded.state.best_epoch)];
  CHECK(report.dice_fg == doctest::Approx(best["val_dice"].get<double>()).epsilon(1e-6));
  CHECK(std::abs(report.mae - best["val_mae"].get<double>()) < 1e-6);
  CHECK(std::abs(report.miou - best["val_miou"].get<double>()) < 1e-6);
}

TEST_CASE("resumed run matches the uninterrupted run") {
  auto splits = small_splits();
  auto cfg = small_config();
  cfg.total_epochs = 4;
  cfg.stage1_epochs = 2;
  TempDir full_dir, split_dir;
  auto full = run_training(cfg, splits, full_dir.path());

  TrainOptions first;
  first.stop_after_epochs = 1;
  run_training(cfg, splits, split_dir.path(), first);
  TrainOptions second;
  second.resume_from = split_dir.path() / "ckpt_last";
  auto resumed = run_training(cfg, splits, split_dir.path(), second);

  REQUIRE(resumed.epochs.size() == 3);
  CHECK(resumed.epochs.back().beta == 1.0);
  CHECK(resumed.state.step == full.state.step);
  CHECK(resumed.epochs.back().val.dice_fg == full.epochs.back().val.dice_fg);
  auto a = load_checkpoint(full.last_checkpoint);
  auto b = load_checkpoint(resumed.last_checkpoint);
  auto pa = a.model->parameters();
  auto pb = b.model->parameters();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(torch::allclose(pa[i], pb[i], 0, 1e-6));
}

TEST_CASE("checkpoint rejects a mismatched model") {
  TempDir dir;
  torch::manual_seed(0);
  SegmentationModel model(ModelConfig::desk());
  save_checkpoint(dir.path() / "c", *model, {2, 10, 50.0, 1});
  auto cfg = ModelConfig::desk();
  cfg.embed_dim = 8;
  SegmentationModel other(cfg);
  CHECK_THROWS(restore_checkpoint(dir.path() / "c", *other));
  auto loaded = load_checkpoint(dir.path() / "c");
  CHECK(loaded.state.epoch == 2);
  CHECK(loaded.state.step == 10);
  CHECK_THROWS(load_checkpoint(dir.path() / "missing"));
}
