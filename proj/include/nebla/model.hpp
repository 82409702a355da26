// SPDX-License-Identifier: Apache-2.0
//
// Full reconstruction network: panoramic image -> coarse volume -> refined volume.

#pragma once

#include <memory>

#include "nebla/config.hpp"
#include "nebla/extractor.hpp"
#include "nebla/field.hpp"
#include "nebla/hashenc.hpp"
#include "nebla/refiner.hpp"

namespace nebla {

template <typename T>
struct ModelOutput {
  Var<T> coarse;   // [1, H, W, D]
  Var<T> refined;  // [1, H, W, D]
};

template <typename T>
class Reconstructor {
 public:
  // Builds the sample plan for cfg.trajectory; pass `plan` to share one.
  explicit Reconstructor(const RunConfig& cfg, std::shared_ptr<const SamplePlan> plan = nullptr);
  Reconstructor(const Reconstructor&) = delete;
  Reconstructor& operator=(const Reconstructor&) = delete;

  // Every parameter drawn from one generator seeded with `seed`, in store order.
  void init(std::uint64_t seed);
  template <typename U>
  void copy_from(const Reconstructor<U>& other);

  // px [rows, cols] with values in [0, 255].
  ModelOutput<T> forward(Graph<T>& g, const Tensor<float>& px) const;

  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  const RunConfig& config() const { return cfg_; }
  const std::shared_ptr<const SamplePlan>& plan() const { return plan_; }
  const UNet3D<T>& unet() const { return unet_; }

 private:
  RunConfig cfg_;
  std::shared_ptr<const SamplePlan> plan_;
  ParameterStore<T> store_;
  HashEncoder<T> hash_;
  PosProjector<T> pos_;
  Extractor<T> extractor_;
  DensityField<T> field_;
  UNet3D<T> unet_;
};

template <typename T>
template <typename U>
void Reconstructor<T>::copy_from(const Reconstructor<U>& other) {
  const auto& src = other.params();
  if (src.size() != store_.size()) throw std::invalid_argument("copy_from: parameter counts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != store_[i].name || src[i].value.shape() != store_[i].value.shape()) {
      throw std::invalid_argument("copy_from: parameter " + store_[i].name + " does not match " + src[i].name);
    }
    store_[i].value = src[i].value.template cast<T>();
  }
}

}  // namespace nebla
