// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction losses on [1, H, W, D] volumes in [0, 255].

#pragma once

#include <cstdint>
#include <vector>

#include "nebla/autodiff.hpp"
#include "nebla/projector.hpp"

namespace nebla {

// Fixed feature network for the perceptual term: strided 3x3 conv + swish
// stages with weights drawn once from `seed`. Every stage output is a tap.
struct FeatureNetConfig {
  std::vector<std::size_t> channels = {8, 16, 32};
  std::size_t in_channels = 3;
  double beta = 1.0;
  std::uint64_t seed = 0x5eed;
  void validate() const;
};

template <typename T>
class FeatureNetwork {
 public:
  explicit FeatureNetwork(const FeatureNetConfig& cfg = {});
  const FeatureNetConfig& config() const { return cfg_; }

  // image [1, h, w] in [0, 255] -> one feature map per tap.
  std::vector<Var<T>> features(Graph<T>& g, Var<T> image) const;

 private:
  FeatureNetConfig cfg_;
  std::vector<Tensor<T>> weights_, biases_;
};

struct LossWeights {
  double proj = 1.0 / 1.2;
  double perc = 1.0 / 25.0;
  void validate() const;
};

template <typename T>
struct LossTerms {
  Var<T> mse, proj, perc, total;
};

template <typename T> Var<T> loss_mse(Var<T> pred, Var<T> gt);
// Sum over the three MIP planes of the summed squared pixel difference.
template <typename T> Var<T> loss_proj(Var<T> pred, Var<T> gt);
// Sum over planes and taps of summed squared feature differences.
template <typename T> Var<T> loss_perc(Var<T> pred, Var<T> gt, const FeatureNetwork<T>& net);

// mse + w.proj * proj + w.perc * perc. Terms with zero weight are still
// evaluated for logging but stay off the total.
template <typename T>
LossTerms<T> loss_total(Var<T> pred, Var<T> gt, const LossWeights& w, const FeatureNetwork<T>& net);

}  // namespace nebla
