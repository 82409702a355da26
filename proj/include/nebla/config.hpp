// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one flat key = value file with dotted section names.
// Lines starting with '#' are comments. A `preset` key, wherever it appears,
// is applied first; the remaining keys override it in file order. Unknown
// keys are rejected.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nebla/extractor.hpp"
#include "nebla/field.hpp"
#include "nebla/geometry.hpp"
#include "nebla/hashenc.hpp"
#include "nebla/losses.hpp"
#include "nebla/optim.hpp"
#include "nebla/refiner.hpp"
#include "nebla/volume.hpp"

namespace nebla {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t early_stop_patience = 30;
  std::size_t max_steps = 0;  // stop after this many optimizer steps; 0 = no limit
  void validate() const;
};

struct PhantomConfig {
  std::size_t teeth = 12;
  double z_lo = 6.0, z_hi = 25.0;
  double tooth_radius_min = 3.0, tooth_radius_max = 4.5;
  double bone = 110.0, cortex = 150.0, tooth = 230.0;
  double cortex_thickness = 1.5;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  std::size_t height = 32, width = 64, depth = 64;  // volume [H, W, D]
  PhantomConfig phantom;
  TrajectoryConfig trajectory;  // rows x cols is the panoramic image size
  double mu_scale = -1.0;       // negative: 4 / mean path length
  PreprocessOptions preprocess;
  HashConfig hash;
  ExtractorConfig vit;  // image size and feature width are derived
  FieldConfig field;
  UNetConfig unet;
  FeatureNetConfig perc;
  LossWeights loss;
  AdamConfig adam;
  PlateauConfig scheduler;
  TrainConfig train;

  // Copies derived fields (ViT image size, feature width) into place.
  void sync();
  // Validates every section plus cross-section constraints. ConfigError.
  void validate() const;
  PhantomSpec phantom_spec(std::uint64_t phantom_seed) const;
};

// "desk", "micro" or "full"; ConfigError otherwise.
RunConfig preset_config(const std::string& name);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Applies "key=value" overrides on top of an existing config.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

// Every key with its resolved value, one "key = value" per line. Parsing the
// echo reproduces the config exactly.
std::string echo_config(const RunConfig& cfg);

struct ConfigKeyDoc {
  std::string key, doc;
};
std::vector<ConfigKeyDoc> config_keys();

}  // namespace nebla
