#include <doctest.h>

#include "clcc/errors.hpp"
#include "clcc/evaluation.hpp"
#include "oracles.hpp"

#include <random>

using namespace clcc;

TEST_CASE("compute_metrics closed-form cases") {
  auto y = torch::zeros({8, 8});
  y.slice(0, 0, 4).slice(1, 0, 4).fill_(1.0);
  auto m = compute_metrics(y, y);
  CHECK(m.mae == 0.0);
  CHECK(m.dice_fg == 100.0);
  CHECK(m.miou == 100.0);

  auto c = compute_metrics(torch::full({8, 8}, 0.25), torch::zeros({8, 8}));
  CHECK(c.mae == doctest::Approx(25.0));
  CHECK(c.dice_fg == 100.0);  // nothing predicted, nothing present
  CHECK(c.miou == 100.0);

  // |B| = |Y| = 16, intersection 8
  auto b = torch::zeros({8, 8});
  b.slice(0, 2, 6).slice(1, 0, 4).fill_(1.0);
  auto h = compute_metrics(b, y);
  CHECK(h.dice_fg == doctest::Approx(50.0));
  CHECK(h.miou == doctest::Approx(100.0 * 0.5 * (8.0 / 24.0 + 40.0 / 56.0)));
  CHECK(h.miou == doctest::Approx(52.38).epsilon(1e-4));
}

TEST_CASE("compute_metrics validates inputs") {
  CHECK_THROWS_AS(compute_metrics(torch::full({4, 4}, 1.5), torch::zeros({4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(torch::zeros({4, 4}), torch::zeros({4, 5})), ShapeError);
}

TEST_CASE("binarized MAE option uses the thresholded map") {
  auto m = compute_metrics(torch::full({4, 4}, 0.25), torch::zeros({4, 4}), {true});
  CHECK(m.mae == 0.0);
  auto t = compute_metrics(torch::full({4, 4}, 0.5), torch::ones({4, 4}), {true});
  CHECK(t.mae == 100.0);  // ties round to background
}

TEST_CASE("compute_metrics matches pixel counting and the Dice/IoU identity") {
  std::mt19937 rng(17);
  std::bernoulli_distribution coin(0.4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> prob(64);
    std::vector<int> mask(64);
    for (int k = 0; k < 64; ++k) {
      prob[k] = trial % 2 ? unit(rng) : (coin(rng) ? 1.0 : 0.0);
      mask[k] = coin(rng) ? 1 : 0;
    }
    auto p = torch::tensor(prob, torch::kFloat64).view({8, 8});
    auto y = torch::tensor(std::vector<double>(mask.begin(), mask.end()), torch::kFloat64).view({8, 8});
    const auto got = compute_metrics(p, y);
    const auto want = oracle::metrics(prob, mask);
    CHECK(got.dice_fg == want.dice);
    CHECK(got.miou == want.miou);
    CHECK(got.mae == doctest::Approx(want.mae).epsilon(1e-12));

    // Foreground IoU from the oracle's mIoU is not separable; recompute it.
    long tp = 0, un = 0;
    for (int k = 0; k < 64; ++k) {
      const int b = prob[k] > 0.5;
      tp += b && mask[k];
      un += b || mask[k];
    }
    const double iou = un == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(un);
    CHECK(got.dice_fg == doctest::Approx(100.0 * 2.0 * iou / (1.0 + iou)).epsilon(1e-12));

    auto perm = torch::randperm(64, torch::kLong);
    const auto shuffled = compute_metrics(p.view({-1}).index_select(0, perm).view({8, 8}),
                                          y.view({-1}).index_select(0, perm).view({8, 8}));
    CHECK(shuffled.dice_fg == got.dice_fg);
    CHECK(shuffled.miou == got.miou);
    CHECK(shuffled.mae == doctest::Approx(got.mae).epsilon(1e-12));
  }
}

namespace {

std::vector<Sample> blob_samples(int count) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    auto mask = torch::zeros({16, 16});
    mask.slice(0, i, i + 6).slice(1, 2, 9).fill_(1.0);
    out.push_back(Sample{"s" + std::to_string(i), torch::rand({3, 16, 16}), mask, std::nullopt});
  }
  return out;
}

}  // namespace

TEST_CASE("evaluate with an oracle predictor is perfect and deterministic") {
  const auto samples = blob_samples(5);
  std::vector<torch::Tensor> truth;
  for (const auto& s : samples) truth.push_back(*s.mask);
  size_t cursor = 0;
  ForegroundPredictor oracle = [&](const torch::Tensor& images) {
    std::vector<torch::Tensor> out;
    for (int64_t k = 0; k < images.size(0); ++k) out.push_back(truth[cursor++ % truth.size()]);
    return torch::stack(out);
  };
  auto r = evaluate(oracle, samples, {}, 2);
  CHECK(r.n_samples == 5);
  CHECK(r.mae == 0.0);
  CHECK(r.dice_fg == 100.0);
  CHECK(r.miou == 100.0);
  CHECK_THROWS_AS(evaluate(oracle, {}, {}), std::invalid_argument);
}

TEST_CASE("constant one-half prediction scores as all background") {
  const auto samples = blob_samples(3);
  auto half = [](const torch::Tensor& images) { return torch::full({images.size(0), 16, 16}, 0.5); };
  auto zero = [](const torch::Tensor& images) { return torch::zeros({images.size(0), 16, 16}); };
  auto a = evaluate(half, samples);
  auto b = evaluate(zero, samples);
  CHECK(a.dice_fg == b.dice_fg);
  CHECK(a.miou == b.miou);
  CHECK(a.dice_fg == 0.0);
}

TEST_CASE("aggregate_runs uses the sample standard deviation") {
  auto report = [](double dice) {
    MetricsReport r;
    r.dice_fg = dice;
    r.mae = 5.0;
    r.miou = dice - 10.0;
    return r;
  };
  auto agg = aggregate_runs({report(73.4), report(73.6), report(73.9)});
  CHECK(agg.dice_fg.mean == doctest::Approx(73.6333).epsilon(1e-5));
  CHECK(agg.dice_fg.std == doctest::Approx(0.2517).epsilon(1e-3));
  CHECK(format_mean_std(agg.dice_fg) == "73.63 ± 0.25");
  CHECK(agg.mae.std == 0.0);
  auto mixed = aggregate_runs({report(1.0), report(1.0), report(4.0)});
  CHECK(mixed.dice_fg.mean == doctest::Approx((2.0 * 1.0 + 4.0) / 3.0));
  CHECK_THROWS_AS(aggregate_runs({report(1.0)}), std::invalid_argument);
}

TEST_CASE("table formatting has one row per method") {
  auto r = [](double d) {
    MetricsReport m;
    m.dice_fg = d;
    return m;
  };
  auto agg = aggregate_runs({r(70.0), r(72.0)});
  auto table = format_table({{"ours (all)", agg}, {"ours (w/o consist)", agg}});
  CHECK(table.find("ours (all)") != std::string::npos);
  CHECK(table.find("71.00 ± 1.41") != std::string::npos);
}
