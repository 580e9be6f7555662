#include "clcc/config.hpp"

#include "clcc/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdlib>
#include <sstream>

namespace clcc {

namespace {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* help;
};

// Order here is the order of the resolved-config snapshot.
const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"model.backbone", "unet", "unet | pointwise"},
      {"model.base_channels", "32", "U-Net stem width"},
      {"model.depth", "4", "U-Net down/up stages"},
      {"model.feature_channels", "16", "backbone output channels C"},
      {"model.embed_dim", "128", "projection dimension D"},
      {"model.grid_side", "4", "patch grid side n"},
      {"data.root", "", "dataset root with images/ and masks/; empty = synthetic"},
      {"data.image_side", "320", "square resize side"},
      {"data.synthetic_count", "200", "synthetic dataset size"},
      {"data.synthetic_seed", "7", "synthetic generator seed"},
      {"data.split_seed", "0", "train/val/test partition seed"},
      {"data.label_seed", "0", "labeled-subset selection seed"},
      {"data.train_fraction", "0.6", "fraction of samples in train"},
      {"data.val_fraction", "0.2", "fraction of samples in val"},
      {"data.test_fraction", "0.2", "fraction of samples in test"},
      {"data.labeled_fraction", "0.2", "labeled fraction of train"},
      {"data.augment", "false", "random flips during training"},
      {"train.total_epochs", "300", "total epochs"},
      {"train.stage1_epochs", "100", "epochs of stage one (contrastive)"},
      {"train.labeled_per_batch", "4", "labeled images per step"},
      {"train.unlabeled_per_batch", "4", "unlabeled images per step"},
      {"train.max_steps_per_epoch", "0", "cap on steps per epoch; 0 = full pass"},
      {"train.lr", "0.001", "AdamW learning rate"},
      {"train.weight_decay", "0.01", "AdamW decoupled weight decay"},
      {"train.adam_beta1", "0.9", "AdamW beta1"},
      {"train.adam_beta2", "0.999", "AdamW beta2"},
      {"train.seed", "0", "weight init and batch order seed"},
      {"train.eval_batch", "8", "images per evaluation forward"},
      {"train.device", "cpu", "cpu | cuda"},
      {"loss.tau", "0.1", "contrastive temperature"},
      {"loss.negatives", "0", "random negatives per anchor; 0 = all other cells"},
      {"loss.contrast_weight", "1", "alpha during stage one"},
      {"loss.consist_weight", "1", "beta during stage two"},
      {"eval.binarized_mae", "false", "MAE on thresholded predictions"},
      {"eval.split", "test", "train_labeled | train_unlabeled | val | test"},
      {"run.dir", "runs/default", "output directory"},
      {"run.repeats", "3", "labeled-selection repeats for ablate"},
  };
  return specs;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void unknown_key(const std::string& key) {
  std::string msg = "unknown config key '" + key + "'. Valid keys:";
  for (const auto& k : ConfigMap::keys()) msg += "\n  " + k;
  throw ConfigError(msg);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) throw ConfigError("config key '" + key + "' expects a number, got '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + text + "'");
}

}  // namespace

ConfigMap::ConfigMap() {
  for (const auto& spec : key_specs()) values_[spec.key] = spec.default_value;
}

std::vector<std::string> ConfigMap::keys() {
  std::vector<std::string> out;
  for (const auto& spec : key_specs()) out.emplace_back(spec.key);
  return out;
}

std::string ConfigMap::describe_keys() {
  std::ostringstream out;
  for (const auto& spec : key_specs())
    out << "  " << spec.key << " (default '" << spec.default_value << "', env " << env_name(spec.key) << "): " << spec.help
        << "\n";
  return out.str();
}

std::string ConfigMap::env_name(const std::string& key) {
  std::string out = "CLCC_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) unknown_key(key);
  it->second = value;
}

const std::string& ConfigMap::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) unknown_key(key);
  return it->second;
}

void ConfigMap::apply_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config " + path.string() + ": key '" + section + "' must sit inside a [section]");
    for (const auto& [name, node] : body) set(section + "." + name, trim(node.data()));
  }
}

void ConfigMap::apply_env(const std::function<const char*(const std::string&)>& lookup) {
  for (const auto& key : keys()) {
    const auto name = env_name(key);
    const char* value = lookup ? lookup(name) : std::getenv(name.c_str());
    if (value) set(key, value);
  }
}

void ConfigMap::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig ConfigMap::resolve() const {
  auto i64 = [this](const char* k) { return parse_number<int64_t>(k, get(k)); };
  auto u64 = [this](const char* k) { return parse_number<uint64_t>(k, get(k)); };
  auto f64 = [this](const char* k) { return parse_number<double>(k, get(k)); };
  auto flag = [this](const char* k) { return parse_bool(k, get(k)); };

  RunConfig rc;
  auto& m = rc.train.model;
  m.backbone = backbone_from_string(get("model.backbone"));
  m.base_channels = i64("model.base_channels");
  m.depth = i64("model.depth");
  m.feature_channels = i64("model.feature_channels");
  m.embed_dim = i64("model.embed_dim");
  m.grid_side = i64("model.grid_side");

  rc.data.root = get("data.root");
  rc.train.image_side = i64("data.image_side");
  rc.data.synthetic_count = i64("data.synthetic_count");
  rc.data.synthetic_seed = u64("data.synthetic_seed");
  rc.data.split.seed = u64("data.split_seed");
  rc.data.split.label_seed = u64("data.label_seed");
  rc.data.split.train_fraction = f64("data.train_fraction");
  rc.data.split.val_fraction = f64("data.val_fraction");
  rc.data.split.test_fraction = f64("data.test_fraction");
  rc.data.split.labeled_fraction = f64("data.labeled_fraction");
  rc.train.augment = flag("data.augment");

  rc.train.total_epochs = i64("train.total_epochs");
  rc.train.stage1_epochs = i64("train.stage1_epochs");
  rc.train.labeled_per_batch = i64("train.labeled_per_batch");
  rc.train.unlabeled_per_batch = i64("train.unlabeled_per_batch");
  rc.train.max_steps_per_epoch = i64("train.max_steps_per_epoch");
  rc.train.lr = f64("train.lr");
  rc.train.weight_decay = f64("train.weight_decay");
  rc.train.adam_beta1 = f64("train.adam_beta1");
  rc.train.adam_beta2 = f64("train.adam_beta2");
  rc.train.seed = u64("train.seed");
  rc.train.eval_batch = i64("train.eval_batch");
  rc.device = get("train.device");
  rc.train.device = rc.device;

  rc.train.tau = f64("loss.tau");
  rc.train.negatives = i64("loss.negatives");
  rc.train.contrast_weight = f64("loss.contrast_weight");
  rc.train.consist_weight = f64("loss.consist_weight");

  rc.metrics.binarized_mae = flag("eval.binarized_mae");
  rc.eval_split = get("eval.split");
  rc.run_dir = get("run.dir");
  rc.repeats = i64("run.repeats");

  rc.train.validate();
  rc.data.split.validate();
  if (rc.data.root.empty() && rc.data.synthetic_count <= 0) throw ConfigError("data.synthetic_count must be positive");
  if (rc.device != "cpu" && rc.device != "cuda") throw ConfigError("train.device must be cpu or cuda");
  if (rc.repeats < 2) throw ConfigError("run.repeats must be at least 2 (mean and sample std)");
  static const std::vector<std::string> splits = {"train_labeled", "train_unlabeled", "val", "test"};
  if (std::find(splits.begin(), splits.end(), rc.eval_split) == splits.end())
    throw ConfigError("eval.split must be one of train_labeled, train_unlabeled, val, test");
  return rc;
}

std::string ConfigMap::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& spec : key_specs()) {
    const std::string key = spec.key;
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << get(key) << "\n";
  }
  return out.str();
}

}  // namespace clcc
