#include "clcc/cli.hpp"

#include "clcc/checkpoint.hpp"
#include "clcc/errors.hpp"
#include "clcc/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>

namespace clcc {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("failed to write " + path.string());
}

std::vector<Sample> resize_all(std::vector<Sample> samples, int64_t side) {
  for (auto& s : samples) s = resize_sample(s, side);
  return samples;
}

const std::vector<Sample>& pick_split(const Splits& splits, const std::string& name) {
  if (name == "train_labeled") return splits.train_labeled;
  if (name == "train_unlabeled") return splits.train_unlabeled;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw ConfigError("unknown split '" + name + "'");
}

std::string epoch_line(const EpochLog& e) {
  auto v = [](const std::optional<double>& x) {
    if (!x) return std::string("-");
    char b[32];
    std::snprintf(b, sizeof(b), "%.4f", *x);
    return std::string(b);
  };
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "epoch %3lld stage %d a=%.0f b=%.0f | sup %s contrast %s consist %s | val dice %.2f miou %.2f "
                "mae %.2f | %.1fs",
                static_cast<long long>(e.epoch), e.stage, e.alpha, e.beta, v(e.sup).c_str(), v(e.contrast).c_str(),
                v(e.consist).c_str(), e.val.dice_fg, e.val.miou, e.val.mae, e.seconds);
  return buf;
}

MetricsReport evaluate_checkpoint(const fs::path& checkpoint, const std::vector<Sample>& samples,
                                  const RunConfig& rc) {
  auto loaded = load_checkpoint(checkpoint);
  loaded.model->to(torch::Device(rc.device));
  return evaluate_model(*loaded.model, samples, rc.metrics, rc.train.eval_batch);
}

}  // namespace

std::vector<Sample> load_configured_dataset(const RunConfig& rc) {
  if (rc.data.root.empty())
    return generate_synthetic(rc.data.synthetic_seed, rc.data.synthetic_count, rc.train.image_side);
  return resize_all(load_dataset(rc.data.root), rc.train.image_side);
}

TrainCommandResult cmd_train(const ConfigMap& config, std::ostream& log, const std::optional<fs::path>& resume) {
  const auto rc = config.resolve();
  TrainCommandResult result;
  result.run_dir = rc.run_dir;
  fs::create_directories(result.run_dir);
  write_text(result.run_dir / "config.ini", config.to_ini());

  const auto samples = load_configured_dataset(rc);
  const auto splits = make_splits(samples, rc.data.split);
  write_split_manifest(splits, rc.data.split, result.run_dir / "split_manifest.json");
  log << "train: " << splits.train_labeled.size() << " labeled, " << splits.train_unlabeled.size()
      << " unlabeled, " << splits.val.size() << " val, " << splits.test.size() << " test\n";

  TrainOptions options;
  options.resume_from = resume;
  options.on_epoch = [&log](const EpochLog& e) { log << epoch_line(e) << "\n" << std::flush; };
  result.training = run_training(rc.train, splits, result.run_dir, options);

  result.test = evaluate_checkpoint(result.training.best_checkpoint, splits.test, rc);
  write_report(result.test, result.run_dir / "test_report");
  log << "best checkpoint (epoch " << result.training.state.best_epoch << ") on test: " << format_report(result.test);
  return result;
}

MetricsReport cmd_eval(const ConfigMap& config,
                       const fs::path& checkpoint,
                       const std::optional<fs::path>& manifest,
                       const fs::path& out_stem) {
  const auto rc = config.resolve();
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  const auto samples = load_configured_dataset(rc);
  Splits splits;
  auto default_manifest = fs::path(rc.run_dir) / "split_manifest.json";
  if (manifest)
    splits = read_split_manifest(*manifest, samples);
  else if (fs::exists(default_manifest))
    splits = read_split_manifest(default_manifest, samples);
  else
    splits = make_splits(samples, rc.data.split);
  auto report = evaluate_checkpoint(checkpoint, pick_split(splits, rc.eval_split), rc);
  write_report(report, out_stem);
  return report;
}

PredictOutputs cmd_predict(const fs::path& checkpoint, const fs::path& image, const fs::path& out,
                           bool export_probability) {
  auto loaded = load_checkpoint(checkpoint);
  const auto input = read_image(image);
  const auto h = input.size(1), w = input.size(2);
  const auto side = loaded.image_side > 0 ? loaded.image_side : std::max(h, w);
  loaded.model->config().validate_input_side(side);

  Sample s{image.stem().string(), input, std::nullopt, std::nullopt};
  const auto resized = resize_sample(s, side);
  torch::Tensor prob;
  {
    torch::NoGradGuard no_grad;
    prob = loaded.model->foreground_probability(resized.image.unsqueeze(0));
  }
  namespace F = torch::nn::functional;
  prob = F::interpolate(prob.unsqueeze(1),
                        F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false))
             .squeeze(0)
             .squeeze(0)
             .clamp(0.0, 1.0);
  const auto mask = prob.gt(0.5).to(torch::kFloat32);

  PredictOutputs outputs;
  outputs.mask = out;
  auto sibling = [&out](const std::string& suffix) {
    return out.parent_path() / (out.stem().string() + suffix + out.extension().string());
  };
  outputs.overlay = sibling("_overlay");
  write_image(mask, outputs.mask);
  auto tint = torch::tensor({1.0F, 0.1F, 0.1F}).view({3, 1, 1});
  auto overlay = input * (1.0 - 0.5 * mask) + tint * (0.5 * mask);
  write_image(overlay, outputs.overlay);
  if (export_probability) {
    outputs.probability = sibling("_prob");
    write_image(prob, *outputs.probability);
  }
  return outputs;
}

void cmd_synth(const ConfigMap& config, const fs::path& out_dir) {
  const auto rc = config.resolve();
  save_dataset(generate_synthetic(rc.data.synthetic_seed, rc.data.synthetic_count, rc.train.image_side), out_dir);
}

std::vector<AblationVariant> ablation_variants(const TrainConfig& base, bool with_baseline) {
  std::vector<AblationVariant> out;
  if (with_baseline) {
    auto t = base;
    t.contrast_weight = 0.0;
    t.consist_weight = 0.0;
    out.push_back({"U-Net (supervised)", "baseline", t});
  }
  auto no_consist = base;
  no_consist.stage1_epochs = base.total_epochs;
  out.push_back({"ours (w/o consist)", "wo_consist", no_consist});
  auto no_contrast = base;
  no_contrast.stage1_epochs = 0;
  out.push_back({"ours (w/o contrast)", "wo_contrast", no_contrast});
  out.push_back({"ours (all)", "all", base});
  return out;
}

AblationResult cmd_ablate(const ConfigMap& config, bool with_baseline, std::ostream& log) {
  const auto rc = config.resolve();
  const fs::path run_dir = rc.run_dir;
  fs::create_directories(run_dir);
  write_text(run_dir / "config.ini", config.to_ini());
  const auto samples = load_configured_dataset(rc);

  AblationResult result;
  for (const auto& variant : ablation_variants(rc.train, with_baseline)) {
    std::vector<MetricsReport> reports;
    for (int64_t k = 0; k < rc.repeats; ++k) {
      auto split = rc.data.split;
      split.label_seed += static_cast<uint64_t>(k);
      auto train = variant.train;
      train.seed += static_cast<uint64_t>(k);
      const auto splits = make_splits(samples, split);
      const auto dir = run_dir / variant.slug / ("seed_" + std::to_string(k));
      fs::create_directories(dir);
      write_split_manifest(splits, split, dir / "split_manifest.json");
      log << variant.name << " repeat " << k << "\n" << std::flush;
      auto trained = run_training(train, splits, dir);
      auto report = evaluate_checkpoint(trained.best_checkpoint, splits.test, rc);
      write_report(report, dir / "test_report");
      log << "  " << format_report(report) << std::flush;
      reports.push_back(std::move(report));
    }
    result.rows.emplace_back(variant.name, aggregate_runs(reports));
    result.runs.emplace_back(variant.name, std::move(reports));
  }
  write_aggregate_table(result.rows, result.runs, run_dir / "ablation");
  result.table = format_table(result.rows);
  return result;
}

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;
  std::string seed;
  std::string device;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "INI config file with [model] [data] [train] [loss] [eval] [run]");
  cmd->add_option("--set", f.overrides, "override a config key: section.key=value (repeatable)");
  cmd->add_option("--run-dir", f.run_dir, "output directory (run.dir)");
  cmd->add_option("--seed", f.seed, "training seed (train.seed)");
  cmd->add_option("--device", f.device, "cpu | cuda (train.device)");
}

ConfigMap build_config(const CommonFlags& f) {
  ConfigMap cfg;
  if (!f.config_path.empty()) cfg.apply_file(f.config_path);
  cfg.apply_env();
  for (const auto& o : f.overrides) cfg.apply_override(o);
  if (!f.run_dir.empty()) cfg.set("run.dir", f.run_dir);
  if (!f.seed.empty()) cfg.set("train.seed", f.seed);
  if (!f.device.empty()) cfg.set("train.device", f.device);
  return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised segmentation with cross-level contrastive and consistency training"};
  app.require_subcommand(1);
  app.footer("Config keys (also settable as environment variables):\n" + ConfigMap::describe_keys());

  CommonFlags common;
  auto* train = app.add_subcommand("train", "two-stage training run");
  add_common(train, common);
  std::string resume;
  train->add_option("--resume", resume, "resume from a checkpoint (typically <run-dir>/ckpt_last)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, common);
  std::string checkpoint, manifest, out_stem, split;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--manifest", manifest, "split manifest (default <run-dir>/split_manifest.json)");
  eval->add_option("--split", split, "split name (eval.split)");
  eval->add_option("--out", out_stem, "report path stem (default <run-dir>/eval_<split>)");

  auto* predict = app.add_subcommand("predict", "segment one image");
  std::string image, mask_out;
  bool export_prob = false;
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--image", image, "input image")->required();
  predict->add_option("--out", mask_out, "output mask path (.png)")->required();
  predict->add_flag("--prob", export_prob, "also write the foreground probability map");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  add_common(synth, common);
  std::string synth_out, count, side;
  synth->add_option("--out", synth_out, "dataset root to create")->required();
  synth->add_option("--count", count, "number of samples (data.synthetic_count)");
  synth->add_option("--side", side, "image side (data.image_side)");

  auto* ablate = app.add_subcommand("ablate", "loss ablation over repeated labeled selections");
  add_common(ablate, common);
  bool baseline = false;
  ablate->add_flag("--baseline", baseline, "also train the supervised-only baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) {
      cmd_train(build_config(common), out, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
    } else if (*eval) {
      auto cfg = build_config(common);
      if (!split.empty()) cfg.set("eval.split", split);
      const auto rc = cfg.resolve();
      const fs::path stem = out_stem.empty() ? fs::path(rc.run_dir) / ("eval_" + rc.eval_split) : fs::path(out_stem);
      const auto report = cmd_eval(cfg, checkpoint, manifest.empty() ? std::nullopt : std::optional<fs::path>(manifest), stem);
      out << format_report(report);
    } else if (*predict) {
      const auto written = cmd_predict(checkpoint, image, mask_out, export_prob);
      out << "wrote " << written.mask.string() << " and " << written.overlay.string() << "\n";
    } else if (*synth) {
      auto cfg = build_config(common);
      if (!count.empty()) cfg.set("data.synthetic_count", count);
      if (!side.empty()) cfg.set("data.image_side", side);
      if (!common.seed.empty()) cfg.set("data.synthetic_seed", common.seed);
      cmd_synth(cfg, synth_out);
      out << "wrote " << cfg.get("data.synthetic_count") << " samples to " << synth_out << "\n";
    } else if (*ablate) {
      out << cmd_ablate(build_config(common), baseline, out).table;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace clcc
