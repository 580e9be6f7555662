#pragma once

// Flat "section.key" configuration. Precedence, lowest first: built-in
// defaults, config file (INI sections), CLCC_<SECTION>_<KEY> environment
// variables, --set overrides, dedicated CLI flags.

#include "clcc/data.hpp"
#include "clcc/evaluation.hpp"
#include "clcc/training.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace clcc {

struct DataConfig {
  std::string root;  // empty: generate a synthetic dataset
  int64_t synthetic_count = 200;
  uint64_t synthetic_seed = 7;
  SplitSpec split;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
  MetricOptions metrics;
  std::string eval_split = "test";
  std::string device = "cpu";
  std::string run_dir = "runs/default";
  int64_t repeats = 3;
};

class ConfigMap {
 public:
  /// Every recognised key with its default value.
  ConfigMap();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void apply_file(const std::filesystem::path& path);
  /// `lookup` returns the variable's value or nullptr; defaults to std::getenv.
  void apply_env(const std::function<const char*(const std::string&)>& lookup = {});
  /// "section.key=value"
  void apply_override(const std::string& assignment);

  RunConfig resolve() const;
  /// INI text that reproduces this map through apply_file.
  std::string to_ini() const;

  static std::vector<std::string> keys();
  static std::string env_name(const std::string& key);
  static std::string describe_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace clcc
