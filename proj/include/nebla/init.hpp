// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>

#include "nebla/autodiff.hpp"

namespace nebla {

template <typename T>
void init_normal(Parameter<T>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : p.value.data()) v = static_cast<T>(n(rng));
}

template <typename T>
void init_constant(Parameter<T>& p, double value) {
  p.value.fill(static_cast<T>(value));
}

// He-style normal scaled by fan-in.
template <typename T>
void init_fan_in(Parameter<T>& p, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  init_normal(p, gain / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace nebla
