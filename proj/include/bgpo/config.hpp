#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgpo/harness.hpp"

namespace bgpo {

/// Invalid configuration; `key()` is the dotted path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline constexpr int kConfigVersion = 1;

struct LabConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  std::uint64_t model_seed = 1;
  TrainConfig train;
  PretrainConfig pretrain;
  FrozenBatchConfig batch;
  GradStudyConfig study;
  std::vector<std::size_t> memory_grid{2, 4, 16, 64};
  std::vector<std::size_t> equiv_grid{1, 4, 16};
  double equiv_perturb = 0.0;
  std::vector<std::size_t> oracle_lengths{1, 2, 3, 4};
  std::size_t oracle_draws = 100000;
};

/// Defaults, then the YAML file at `path` (if non-empty), then each
/// "dotted.key=value" override in order.
LabConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});

/// The default configuration as YAML text; documents every key.
std::string default_config_yaml();

}  // namespace bgpo
