#include "clcc/training.hpp"

#include "clcc/errors.hpp"
#include "clcc/patching.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace clcc {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  model.validate();
  model.validate_input_side(image_side);
  if (total_epochs <= 0) throw ConfigError("train.total_epochs must be positive");
  // Zero-length stages are how single-loss ablations are expressed.
  if (stage1_epochs < 0 || stage1_epochs > total_epochs)
    throw ConfigError("train.stage1_epochs must lie in [0, total_epochs]");
  if (labeled_per_batch < 1) throw ConfigError("train.labeled_per_batch must be at least 1");
  if (unlabeled_per_batch < 0) throw ConfigError("train.unlabeled_per_batch must be non-negative");
  if (max_steps_per_epoch < 0) throw ConfigError("train.max_steps_per_epoch must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (negatives < 0) throw ConfigError("loss.negatives must be non-negative");
  if (eval_batch < 1) throw ConfigError("train.eval_batch must be at least 1");
  if (device != "cpu" && device != "cuda") throw ConfigError("train.device must be cpu or cuda");
  if (device == "cuda" && !torch::cuda::is_available()) throw ConfigError("train.device = cuda but no CUDA device is available");
  LossWeights{contrast_weight, consist_weight, tau}.validate();
}

LossWeights loss_schedule(int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs)
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.total_epochs) + ")");
  if (epoch < cfg.stage1_epochs) return {cfg.contrast_weight, 0.0, cfg.tau};
  return {0.0, cfg.consist_weight, cfg.tau};
}

std::vector<std::string> Batch::ids() const {
  std::vector<std::string> out;
  for (const auto& s : labeled) out.push_back(s.id);
  for (const auto& s : unlabeled) out.push_back(s.id);
  return out;
}

void PoolCycler::reshuffle(std::mt19937_64& rng) {
  order_.resize(size_);
  std::iota(order_.begin(), order_.end(), size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

size_t PoolCycler::next(std::mt19937_64& rng) {
  if (size_ == 0) throw std::logic_error("PoolCycler: empty pool");
  if (cursor_ >= order_.size()) reshuffle(rng);
  return order_[cursor_++];
}

BatchComposer::BatchComposer(const std::vector<Sample>& labeled,
                             const std::vector<Sample>& unlabeled,
                             int64_t labeled_per_batch,
                             int64_t unlabeled_per_batch,
                             uint64_t seed,
                             bool augment)
    : labeled_(labeled),
      unlabeled_(unlabeled),
      labeled_per_batch_(labeled_per_batch),
      unlabeled_per_batch_(unlabeled_per_batch),
      seed_(seed),
      augment_(augment),
      unlabeled_defines_epoch_(unlabeled_per_batch > 0),
      labeled_cycle_(labeled.size()),
      unlabeled_cycle_(unlabeled.size()) {
  if (labeled_per_batch_ > 0 && labeled_.empty()) throw DataError("labeled pool is empty");
  if (unlabeled_per_batch_ > 0 && unlabeled_.empty()) throw DataError("unlabeled pool is empty");
  start_epoch(0);
}

void BatchComposer::start_epoch(int64_t epoch) {
  std::seed_seq seq{static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32),
                    static_cast<uint32_t>(epoch), 0x9e3779b9U};
  rng_.seed(seq);
  labeled_cycle_.reshuffle(rng_);
  unlabeled_cycle_.reshuffle(rng_);
}

int64_t BatchComposer::steps_per_epoch() const {
  auto ceil_div = [](int64_t a, int64_t b) { return (a + b - 1) / b; };
  if (unlabeled_defines_epoch_) return ceil_div(static_cast<int64_t>(unlabeled_.size()), unlabeled_per_batch_);
  return ceil_div(static_cast<int64_t>(labeled_.size()), labeled_per_batch_);
}

Batch BatchComposer::next() {
  Batch b;
  auto draw = [this](PoolCycler& cycle, const std::vector<Sample>& pool, int64_t count, bool defines_epoch,
                     std::vector<Sample>& out) {
    for (int64_t k = 0; k < count; ++k) {
      // The epoch-defining pool never wraps mid-epoch; its last batch is short.
      if (defines_epoch && cycle.remaining() == 0) break;
      const auto& s = pool[cycle.next(rng_)];
      out.push_back(augment_ ? augment_sample(s, rng_) : s);
    }
  };
  draw(labeled_cycle_, labeled_, labeled_per_batch_, !unlabeled_defines_epoch_, b.labeled);
  draw(unlabeled_cycle_, unlabeled_, unlabeled_per_batch_, unlabeled_defines_epoch_, b.unlabeled);
  for (const auto& s : b.unlabeled)
    if (s.mask) throw std::logic_error("unlabeled pool member '" + s.id + "' still carries a mask");
  return b;
}

namespace {

std::vector<const Sample*> pointers(const std::vector<Sample>& v) {
  std::vector<const Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::optional<double> value_of(const torch::Tensor& t) {
  if (!t.defined()) return std::nullopt;
  return t.item<double>();
}

}  // namespace

StepLog train_step(SegmentationModelImpl& model,
                   const Batch& batch,
                   const LossWeights& weights,
                   torch::optim::Optimizer& optimizer,
                   std::optional<at::Generator> negatives_rng,
                   int64_t negatives) {
  weights.validate();
  if (batch.size() == 0) throw std::invalid_argument("train_step: empty batch");
  model.train();
  const auto n = model.config().grid_side;
  const bool need_contrast = weights.alpha > 0.0;
  const bool need_consist = weights.beta > 0.0;
  const bool need_patches = need_contrast || need_consist;

  optimizer.zero_grad();
  const auto device = model.parameters().front().device();

  torch::Tensor sup, contrast, consist;
  std::vector<torch::Tensor> global_features, global_logits, global_images;

  if (!batch.labeled.empty()) {
    auto images = stack_images(pointers(batch.labeled)).to(device);
    auto masks = stack_masks(pointers(batch.labeled)).to(device);
    auto features = model.features(images);
    auto logits = model.predict(features);
    sup = supervised_loss(logits, masks);
    global_images.push_back(images);
    global_features.push_back(features);
    global_logits.push_back(logits);
  }
  if (need_patches && !batch.unlabeled.empty()) {
    auto images = stack_images(pointers(batch.unlabeled)).to(device);
    auto features = model.features(images);
    global_images.push_back(images);
    global_features.push_back(features);
    if (need_consist) global_logits.push_back(model.predict(features));
  }

  if (need_patches) {
    auto images = torch::cat(global_images);
    auto features = torch::cat(global_features);
    auto patch_features = model.features(to_patch_batch(images, n));
    if (need_contrast) {
      auto grid = model.project_global(features);
      auto vectors = model.project_patch(patch_features).reshape({images.size(0), n * n, -1});
      contrast = contrastive_loss(grid, vectors, weights.tau,
                                  negatives > 0 ? std::optional<int64_t>(negatives) : std::nullopt, negatives_rng);
    }
    if (need_consist) consist = consistency_loss(torch::cat(global_logits), model.predict(patch_features), n);
  }

  StepLog log;
  torch::Tensor total;
  try {
    total = total_loss(sup, contrast, consist, weights);
  } catch (const TrainingError& e) {
    throw TrainingError(std::string(e.what()) + " [batch ids: " + join(batch.ids()) + "]");
  }
  log.sup = value_of(sup);
  log.contrast = value_of(contrast);
  log.consist = value_of(consist);
  log.total = total.item<double>();

  if (total.requires_grad()) {
    total.backward();
    double sq = 0.0;
    for (const auto& p : model.parameters())
      if (p.grad().defined()) sq += p.grad().pow(2).sum().item<double>();
    log.grad_norm = std::sqrt(sq);
    if (!std::isfinite(log.grad_norm)) {
      std::ostringstream msg;
      msg << "non-finite gradient norm (sup=" << (log.sup ? *log.sup : 0.0)
          << ", contrast=" << (log.contrast ? *log.contrast : 0.0)
          << ", consist=" << (log.consist ? *log.consist : 0.0) << ") [batch ids: " << join(batch.ids()) << "]";
      throw TrainingError(msg.str());
    }
    optimizer.step();
    log.updated = true;
  }
  return log;
}

std::string to_json_line(const EpochLog& log) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["stage"] = log.stage;
  j["alpha"] = log.alpha;
  j["beta"] = log.beta;
  j["sup"] = opt(log.sup);
  j["contrast"] = opt(log.contrast);
  j["consist"] = opt(log.consist);
  j["total"] = log.total;
  j["steps"] = log.steps;
  j["val_mae"] = log.val.mae;
  j["val_dice"] = log.val.dice_fg;
  j["val_miou"] = log.val.miou;
  j["seconds"] = log.seconds;
  return j.dump();
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(SegmentationModelImpl& model, const TrainConfig& cfg) {
  return std::make_unique<torch::optim::AdamW>(
      model.parameters(),
      torch::optim::AdamWOptions(cfg.lr).betas({cfg.adam_beta1, cfg.adam_beta2}).weight_decay(cfg.weight_decay));
}

namespace {

struct Mean {
  double sum = 0.0;
  int64_t count = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++count;
    }
  }
  std::optional<double> value() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

void check_pool_sides(const std::vector<Sample>& pool, int64_t side, const char* name) {
  for (const auto& s : pool)
    if (s.height() != side || s.width() != side)
      throw ConfigError(std::string(name) + " sample '" + s.id + "' is " + std::to_string(s.height()) + "x" +
                        std::to_string(s.width()) + ", expected " + std::to_string(side) + "x" +
                        std::to_string(side) + " (resize at pipeline assembly)");
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg,
                         const Splits& splits,
                         const fs::path& run_dir,
                         const TrainOptions& options) {
  cfg.validate();
  if (splits.val.empty()) throw DataError("validation split is empty");
  check_pool_sides(splits.train_labeled, cfg.image_side, "labeled");
  check_pool_sides(splits.train_unlabeled, cfg.image_side, "unlabeled");
  check_pool_sides(splits.val, cfg.image_side, "val");
  fs::create_directories(run_dir);

  torch::manual_seed(cfg.seed);
  SegmentationModel model(cfg.model);
  model->to(torch::Device(cfg.device));
  auto optimizer = make_optimizer(*model, cfg);

  TrainResult result;
  result.best_checkpoint = run_dir / "ckpt_best";
  result.last_checkpoint = run_dir / "ckpt_last";
  auto& state = result.state;
  if (options.resume_from) state = restore_checkpoint(*options.resume_from, *model, optimizer.get());

  const auto unlabeled_per_batch = splits.train_unlabeled.empty() ? 0 : cfg.unlabeled_per_batch;
  BatchComposer composer(splits.train_labeled, splits.train_unlabeled, cfg.labeled_per_batch, unlabeled_per_batch,
                         cfg.seed, cfg.augment);

  std::ofstream log_file(run_dir / "train_log.jsonl", std::ios::app);
  if (!log_file) throw DataError("cannot open " + (run_dir / "train_log.jsonl").string());

  int64_t epochs_run = 0;
  for (int64_t epoch = state.epoch; epoch < cfg.total_epochs; ++epoch) {
    if (options.stop_after_epochs && epochs_run >= *options.stop_after_epochs) break;
    const auto started = std::chrono::steady_clock::now();

    if (epoch == cfg.stage1_epochs && epoch > 0 && fs::exists(result.best_checkpoint)) {
      const auto resumed = restore_checkpoint(result.best_checkpoint, *model, optimizer.get());
      state.best_val_dice = resumed.best_val_dice;
      state.best_epoch = resumed.best_epoch;
    }

    const auto weights = loss_schedule(epoch, cfg);
    composer.start_epoch(epoch);
    auto steps = composer.steps_per_epoch();
    if (cfg.max_steps_per_epoch > 0) steps = std::min(steps, cfg.max_steps_per_epoch);

    EpochLog log;
    log.epoch = epoch;
    log.stage = epoch < cfg.stage1_epochs ? 1 : 2;
    log.alpha = weights.alpha;
    log.beta = weights.beta;
    Mean sup, contrast, consist, total;
    for (int64_t k = 0; k < steps; ++k) {
      auto batch = composer.next();
      if (batch.size() == 0) break;
      auto gen = at::make_generator<at::CPUGeneratorImpl>(cfg.seed * 1000003ULL + static_cast<uint64_t>(state.step));
      const auto step = train_step(*model, batch, weights, *optimizer, gen, cfg.negatives);
      sup.add(step.sup);
      contrast.add(step.contrast);
      consist.add(step.consist);
      total.add(step.total);
      ++state.step;
      ++log.steps;
    }
    log.sup = sup.value();
    log.contrast = contrast.value();
    log.consist = consist.value();
    log.total = total.value().value_or(0.0);

    log.val = evaluate_model(*model, splits.val, {}, cfg.eval_batch);
    state.epoch = epoch + 1;
    if (log.val.dice_fg > state.best_val_dice) {
      state.best_val_dice = log.val.dice_fg;
      state.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, *model, state, optimizer.get(), cfg.image_side);
    }
    save_checkpoint(result.last_checkpoint, *model, state, optimizer.get(), cfg.image_side);

    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log_file << to_json_line(log) << "\n";
    log_file.flush();
    if (!log_file) throw DataError("failed to append to train_log.jsonl");
    if (options.on_epoch) options.on_epoch(log);
    result.epochs.push_back(std::move(log));
    ++epochs_run;
  }
  return result;
}

}  // namespace clcc
