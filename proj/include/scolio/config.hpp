#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "scolio/data.hpp"
#include "scolio/model.hpp"
#include "scolio/orh.hpp"

namespace scolio {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 16;
  double lr = 1e-4;
  double lr_min = 1e-6;
  double warmup_frac = 0.05;  // warmup epochs = ceil(warmup_frac * epochs)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  LossWeights lambda;
  AugmentPolicy augment;
  int input_size = 64;
  int folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Everything a run depends on, as one flat key=value namespace:
/// model.*, train.* and synth.* keys.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  /// Unknown keys and unparsable values throw std::invalid_argument.
  void set(const std::string& key, const std::string& value);
  void apply(const std::map<std::string, std::string>& values);
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  /// Sorted key = value lines; reading them back gives the same config.
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;
  static RunConfig load(const std::filesystem::path& path);
};

/// "16x2,32x2,64x2": channels x blocks per stage, each stage halving resolution.
std::vector<StageConfig> parse_stages(const std::string& text);
std::string format_stages(const std::vector<StageConfig>& stages);

/// Named layouts: full, baseline+sfmm, baseline+orh, baseline.
void apply_variant(ModelConfig& cfg, const std::string& name);

}  // namespace scolio
