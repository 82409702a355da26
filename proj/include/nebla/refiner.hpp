// SPDX-License-Identifier: Apache-2.0
//
// 3-D U-Net refining the coarse volume. Each encoder level runs two
// conv3 + instance norm + swish layers (its skip feature) and then a stride-2
// convolution; each decoder level upsamples by a 2^3 transposed convolution,
// concatenates the matching skip and runs two conv blocks. A final 1^3
// convolution and 255 * sigmoid produce the density.

#pragma once

#include <random>
#include <vector>

#include "nebla/autodiff.hpp"

namespace nebla {

struct UNetConfig {
  std::vector<std::size_t> channels = {4, 8, 16, 32};
  double beta = 1.0;
  void validate() const;
  std::size_t levels() const { return channels.size(); }
};

template <typename T>
struct UNetOutput {
  Var<T> volume;               // [1, H, W, D]
  std::vector<int> skip_nodes;  // encoder features, shallow to deep
};

template <typename T>
class UNet3D {
 public:
  UNet3D(ParameterStore<T>& store, const UNetConfig& cfg);
  void init(std::mt19937_64& rng);
  const UNetConfig& config() const { return cfg_; }

  // Input values are expected in [0, 255]; they are scaled to [0, 1] first.
  UNetOutput<T> forward(Graph<T>& g, Var<T> coarse) const;
  Var<T> operator()(Graph<T>& g, Var<T> coarse) const { return forward(g, coarse).volume; }

  // Throws ConfigError unless every spatial extent is divisible by 2^levels.
  void check_dims(const Shape& shape) const;

 private:
  struct Conv {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
  };
  Var<T> block(Graph<T>& g, const Conv& c, Var<T> x) const;

  UNetConfig cfg_;
  std::vector<std::pair<Conv, Conv>> enc_, dec_;
  std::vector<Conv> down_, up_;
  Conv final_;
};

// Number of concat nodes consuming each skip feature; a sound U-Net has 1 each.
template <typename T>
std::vector<std::size_t> skip_usage(const Graph<T>& g, const std::vector<int>& skip_nodes);

}  // namespace nebla
