// SPDX-License-Identifier: Apache-2.0
//
// Adam, reduce-on-plateau learning rate and early stopping.

#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "nebla/autodiff.hpp"

namespace nebla {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  void validate() const;
};

// One instance covers the whole parameter store, in store order. Moments use
// the parameter type so checkpoints can store them verbatim.
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& params, const AdamConfig& cfg);

  // Bias-corrected update from the accumulated gradients. Throws
  // NumericalError naming the first parameter with a non-finite gradient.
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  ParameterStore<T>& params_;
  AdamConfig cfg_;
  double lr_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct PlateauConfig {
  double factor = 0.5;
  std::size_t patience = 15;
  double min_lr = 1e-5;
  void validate() const;
};

// Strict improvement resets the counter; `patience` consecutive epochs
// without one multiply the rate by `factor`, clamped at min_lr.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const PlateauConfig& cfg = {});
  // Returns the learning rate for the next epoch. NumericalError on NaN/Inf.
  double step(double val_loss, double lr);

  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

 private:
  PlateauConfig cfg_;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience = 30) : patience_(patience) {}
  // True once `patience` consecutive epochs failed to improve on the best loss.
  bool step(double val_loss);
  bool improved() const { return bad_epochs == 0; }

  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

 private:
  std::size_t patience_;
};

}  // namespace nebla
