// SPDX-License-Identifier: Apache-2.0
//
// Per-sample density prediction and coarse volume assembly.

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "nebla/autodiff.hpp"
#include "nebla/geometry.hpp"
#include "nebla/hashenc.hpp"

namespace nebla {

// Everything about the sample cloud that stays fixed during training.
struct SamplePlan {
  SampleSet samples;
  HashLookup lookup;
  std::shared_ptr<const std::vector<std::uint32_t>> sample_pixel;  // image pixel per sample
  std::shared_ptr<const std::vector<std::uint32_t>> sample_voxel;  // nearest voxel per sample
  std::vector<std::uint8_t> mask;                                  // voxels hit by at least one sample
  Shape volume_shape;                                              // [1, H, W, D]

  std::size_t points() const { return samples.point_count(); }
};

// Builds samples for `traj`, normalizes them by (extent - 1) per axis for the
// hash lookup and maps each to its nearest voxel. Throws DataError when a
// sample falls outside the volume.
SamplePlan make_sample_plan(const TrajectoryConfig& traj, const HashConfig& hash, std::size_t height,
                            std::size_t width, std::size_t depth);

struct FieldConfig {
  std::size_t width = 32;  // f
  std::size_t depth = 8;   // hidden layers
  std::size_t skip_layer = 4;
  double beta = 1.0;
  void validate() const;
};

template <typename T>
class DensityField {
 public:
  DensityField(ParameterStore<T>& store, const FieldConfig& cfg);
  void init(std::mt19937_64& rng);
  const FieldConfig& config() const { return cfg_; }

  // f_img [pixels, f] gathered per sample plus f_pos [samples, f].
  Var<T> fuse(Var<T> f_img, Var<T> f_pos, const std::shared_ptr<const std::vector<std::uint32_t>>& sample_pixel) const;
  // [n, f] -> [n] densities in (0, 255).
  Var<T> density(Graph<T>& g, Var<T> fused) const;

  Parameter<T>& layer_weight(std::size_t l) { return *w_.at(l); }
  Parameter<T>& layer_bias(std::size_t l) { return *b_.at(l); }
  Parameter<T>& out_weight() { return *out_w_; }
  Parameter<T>& out_bias() { return *out_b_; }

 private:
  FieldConfig cfg_;
  std::vector<Parameter<T>*> w_, b_;
  Parameter<T>*out_w_, *out_b_;
};

// Mean of the sample densities landing in each voxel; untouched voxels are 0.
template <typename T>
Var<T> assemble_volume(Var<T> densities, const SamplePlan& plan) {
  if (densities.size() != plan.points()) {
    throw std::invalid_argument("assemble_volume: " + std::to_string(densities.size()) + " densities for " +
                                std::to_string(plan.points()) + " samples");
  }
  return scatter_mean(densities, plan.sample_voxel, plan.volume_shape);
}

}  // namespace nebla
