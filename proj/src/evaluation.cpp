#include "clcc/evaluation.hpp"

#include "clcc/errors.hpp"
#include "clcc/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace clcc {

SampleMetrics compute_metrics(const torch::Tensor& prob_fg, const torch::Tensor& mask, const MetricOptions& opt) {
  if (prob_fg.dim() != 2 || prob_fg.sizes() != mask.sizes())
    throw ShapeError("compute_metrics: prediction " + c10::str(prob_fg.sizes()) + " vs mask " +
                     c10::str(mask.sizes()));
  auto p = prob_fg.detach().to(torch::kCPU, torch::kFloat64);
  if (p.numel() == 0) throw ShapeError("compute_metrics: empty map");
  if (!(p.ge(0.0).logical_and(p.le(1.0))).all().item<bool>())
    throw std::invalid_argument("compute_metrics: probabilities must lie in [0, 1]");
  auto y = mask.detach().to(torch::kCPU).gt(0.5);
  auto b = p.gt(0.5);

  SampleMetrics m;
  const auto yd = y.to(torch::kFloat64);
  m.mae = 100.0 * (opt.binarized_mae ? (b.to(torch::kFloat64) - yd) : (p - yd)).abs().mean().item<double>();

  const double pixels = static_cast<double>(p.numel());
  const double tp = b.logical_and(y).sum().item<double>();
  const double pred_fg = b.sum().item<double>();
  const double true_fg = y.sum().item<double>();
  const double union_fg = pred_fg + true_fg - tp;
  const double tn = pixels - union_fg;
  const double union_bg = pixels - tp;

  m.dice_fg = (pred_fg + true_fg) == 0.0 ? 100.0 : 100.0 * 2.0 * tp / (pred_fg + true_fg);
  const double iou_fg = union_fg == 0.0 ? 1.0 : tp / union_fg;
  const double iou_bg = union_bg == 0.0 ? 1.0 : tn / union_bg;
  m.miou = 100.0 * 0.5 * (iou_fg + iou_bg);
  return m;
}

MetricsReport evaluate(const ForegroundPredictor& predict,
                       const std::vector<Sample>& samples,
                       const MetricOptions& opt,
                       int64_t batch_size) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
  if (batch_size <= 0) batch_size = 1;
  MetricsReport report;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    const auto stop = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    std::vector<torch::Tensor> images;
    for (size_t i = start; i < stop; ++i) images.push_back(samples[i].image);
    const auto prob = predict(torch::stack(images));
    for (size_t i = start; i < stop; ++i) {
      const auto& s = samples[i];
      const auto& truth = s.mask ? s.mask : s.audit_mask;
      if (!truth) throw DataError("sample '" + s.id + "' has no ground truth to evaluate against");
      auto m = compute_metrics(prob[static_cast<int64_t>(i - start)], *truth, opt);
      m.id = s.id;
      report.per_sample.push_back(std::move(m));
    }
  }
  report.n_samples = static_cast<int64_t>(report.per_sample.size());
  for (const auto& m : report.per_sample) {
    report.mae += m.mae;
    report.dice_fg += m.dice_fg;
    report.miou += m.miou;
  }
  const auto count = static_cast<double>(report.n_samples);
  report.mae /= count;
  report.dice_fg /= count;
  report.miou /= count;
  return report;
}

MetricsReport evaluate_model(SegmentationModelImpl& model,
                             const std::vector<Sample>& samples,
                             const MetricOptions& opt,
                             int64_t batch_size) {
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard no_grad;
  const auto device = model.parameters().front().device();
  auto report = evaluate(
      [&model, device](const torch::Tensor& images) {
        return model.foreground_probability(images.to(device)).cpu();
      },
                         samples, opt, batch_size);
  model.train(was_training);
  return report;
}

namespace {

MetricStat stat(const std::vector<double>& v) {
  MetricStat s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return s;
}

}  // namespace

RunAggregate aggregate_runs(const std::vector<MetricsReport>& reports) {
  if (reports.size() < 2) throw std::invalid_argument("aggregate_runs needs at least 2 reports");
  std::vector<double> mae, dice, miou;
  for (const auto& r : reports) {
    mae.push_back(r.mae);
    dice.push_back(r.dice_fg);
    miou.push_back(r.miou);
  }
  return RunAggregate{stat(mae), stat(dice), stat(miou), static_cast<int64_t>(reports.size())};
}

std::string format_mean_std(const MetricStat& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", s.mean, s.std);
  return buf;
}

std::string format_table(const std::vector<std::pair<std::string, RunAggregate>>& rows) {
  size_t name_width = 6;
  for (const auto& [name, _] : rows) name_width = std::max(name_width, name.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s | %-15s %-15s %-15s\n", static_cast<int>(name_width), "Method", "MAE",
                "Dice", "mIoU");
  out << line << std::string(name_width + 50, '-') << "\n";
  for (const auto& [name, agg] : rows) {
    // "±" is two bytes in UTF-8; pad by hand so columns stay aligned.
    auto cell = [](const MetricStat& s) {
      auto t = format_mean_std(s);
      return t + std::string(t.size() < 16 ? 16 - t.size() : 1, ' ');
    };
    std::snprintf(line, sizeof(line), "%-*s | ", static_cast<int>(name_width), name.c_str());
    out << line << cell(agg.mae) << cell(agg.dice_fg) << cell(agg.miou) << "\n";
  }
  return out.str();
}

std::string format_report(const MetricsReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "samples %lld | MAE %.2f | Dice %.2f | mIoU %.2f\n",
                static_cast<long long>(report.n_samples), report.mae, report.dice_fg, report.miou);
  return buf;
}

namespace {

nlohmann::ordered_json report_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["n_samples"] = report.n_samples;
  j["aggregate"] = {{"mae", report.mae}, {"dice_fg", report.dice_fg}, {"miou", report.miou}};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& m : report.per_sample)
    rows.push_back({{"id", m.id}, {"mae", m.mae}, {"dice_fg", m.dice_fg}, {"miou", m.miou}});
  j["per_sample"] = std::move(rows);
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("failed to write " + path.string());
}

}  // namespace

void write_report(const MetricsReport& report, const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  auto txt_path = stem;
  txt_path += ".txt";
  write_text(json_path, report_json(report).dump(2) + "\n");
  write_text(txt_path, format_report(report));
}

void write_aggregate_table(const std::vector<std::pair<std::string, RunAggregate>>& rows,
                           const std::vector<std::pair<std::string, std::vector<MetricsReport>>>& runs,
                           const std::filesystem::path& stem) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (size_t k = 0; k < rows.size(); ++k) {
    const auto& [name, agg] = rows[k];
    nlohmann::ordered_json row;
    row["method"] = name;
    row["runs"] = agg.runs;
    for (auto [key, s] : {std::pair{"mae", agg.mae}, std::pair{"dice_fg", agg.dice_fg}, std::pair{"miou", agg.miou}})
      row[key] = {{"mean", s.mean}, {"std", s.std}};
    if (k < runs.size()) {
      auto per_run = nlohmann::ordered_json::array();
      for (const auto& r : runs[k].second) per_run.push_back(report_json(r)["aggregate"]);
      row["per_run"] = std::move(per_run);
    }
    j.push_back(std::move(row));
  }
  auto json_path = stem;
  json_path += ".json";
  auto txt_path = stem;
  txt_path += ".txt";
  write_text(json_path, j.dump(2) + "\n");
  write_text(txt_path, format_table(rows));
}

}  // namespace clcc
