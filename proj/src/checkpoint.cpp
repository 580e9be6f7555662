#include "clcc/checkpoint.hpp"

#include "clcc/errors.hpp"

#include <algorithm>
#include <cstring>

namespace clcc {

namespace fs = std::filesystem;

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"backbone", to_string(cfg.backbone)},
          {"in_channels", cfg.in_channels},
          {"base_channels", cfg.base_channels},
          {"depth", cfg.depth},
          {"feature_channels", cfg.feature_channels},
          {"embed_dim", cfg.embed_dim},
          {"grid_side", cfg.grid_side}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  cfg.in_channels = j.at("in_channels").get<int64_t>();
  cfg.base_channels = j.at("base_channels").get<int64_t>();
  cfg.depth = j.at("depth").get<int64_t>();
  cfg.feature_channels = j.at("feature_channels").get<int64_t>();
  cfg.embed_dim = j.at("embed_dim").get<int64_t>();
  cfg.grid_side = j.at("grid_side").get<int64_t>();
  cfg.validate();
  return cfg;
}

namespace {

std::string archive_key(const std::string& prefix, std::string name) {
  std::replace(name.begin(), name.end(), '.', '/');
  return prefix + name;
}

torch::Tensor string_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kInt8);
  if (!s.empty()) std::memcpy(t.data_ptr<int8_t>(), s.data(), s.size());
  return t;
}

std::string tensor_string(const torch::Tensor& t) {
  std::string s(static_cast<size_t>(t.numel()), '\0');
  if (!s.empty()) std::memcpy(s.data(), t.contiguous().data_ptr<int8_t>(), s.size());
  return s;
}

torch::Tensor read_required(torch::serialize::InputArchive& ar, const std::string& key, const fs::path& path) {
  torch::Tensor t;
  if (!ar.try_read(key, t)) throw DataError("checkpoint " + path.string() + " lacks key '" + key + "'");
  return t;
}

void read_into(torch::serialize::InputArchive& ar,
               const std::string& key,
               torch::Tensor& dst,
               const fs::path& path) {
  auto src = read_required(ar, key, path);
  if (src.sizes() != dst.sizes())
    throw DataError("checkpoint " + path.string() + ": shape mismatch for '" + key + "'");
  torch::NoGradGuard no_grad;
  dst.copy_(src);
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("unreadable checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  const auto version = read_required(ar, "meta/schema_version", path).item<int64_t>();
  if (version != kCheckpointSchemaVersion)
    throw DataError("checkpoint " + path.string() + " has schema version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointSchemaVersion));
  return ar;
}

TrainState read_state(torch::serialize::InputArchive& ar, const fs::path& path) {
  TrainState st;
  st.epoch = read_required(ar, "state/epoch", path).item<int64_t>();
  st.step = read_required(ar, "state/step", path).item<int64_t>();
  st.best_val_dice = read_required(ar, "state/best_val_dice", path).item<double>();
  st.best_epoch = read_required(ar, "state/best_epoch", path).item<int64_t>();
  return st;
}

}  // namespace

void save_checkpoint(const fs::path& path,
                     SegmentationModelImpl& model,
                     const TrainState& state,
                     torch::optim::Optimizer* optimizer,
                     int64_t image_side) {
  torch::serialize::OutputArchive ar;
  ar.write("meta/schema_version", torch::tensor(kCheckpointSchemaVersion, torch::kInt64));
  ar.write("meta/image_side", torch::tensor(image_side, torch::kInt64));
  ar.write("meta/model_config", string_tensor(to_json(model.config()).dump()));
  for (const auto& p : model.named_parameters()) ar.write(archive_key("params/", p.key()), p.value().detach());
  for (const auto& b : model.named_buffers()) ar.write(archive_key("buffers/", b.key()), b.value(), true);
  ar.write("state/epoch", torch::tensor(state.epoch, torch::kInt64));
  ar.write("state/step", torch::tensor(state.step, torch::kInt64));
  ar.write("state/best_val_dice", torch::tensor(state.best_val_dice, torch::kFloat64));
  ar.write("state/best_epoch", torch::tensor(state.best_epoch, torch::kInt64));
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    ar.write("optimizer", opt);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write then rename so a crash never leaves a truncated checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  try {
    ar.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw DataError("failed to write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path);
}

TrainState restore_checkpoint(const fs::path& path, SegmentationModelImpl& model, torch::optim::Optimizer* optimizer) {
  auto ar = open_archive(path);
  const auto stored = model_config_from_json(nlohmann::json::parse(tensor_string(read_required(ar, "meta/model_config", path))));
  if (to_json(stored) != to_json(model.config()))
    throw DataError("checkpoint " + path.string() + " was written for model config " + to_json(stored).dump());
  for (auto& p : model.named_parameters()) read_into(ar, archive_key("params/", p.key()), p.value(), path);
  for (auto& b : model.named_buffers()) read_into(ar, archive_key("buffers/", b.key()), b.value(), path);
  if (optimizer) {
    torch::serialize::InputArchive opt;
    if (ar.try_read("optimizer", opt)) optimizer->load(opt);
  }
  return read_state(ar, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  auto ar = open_archive(path);
  const auto cfg = model_config_from_json(nlohmann::json::parse(tensor_string(read_required(ar, "meta/model_config", path))));
  LoadedCheckpoint out;
  out.model = SegmentationModel(cfg);
  out.state = restore_checkpoint(path, *out.model);
  out.image_side = read_required(ar, "meta/image_side", path).item<int64_t>();
  out.model->eval();
  return out;
}

}  // namespace clcc
