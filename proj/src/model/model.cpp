// SPDX-License-Identifier: Apache-2.0
#include "nebla/model.hpp"

#include <random>

namespace nebla {

template <typename T>
Reconstructor<T>::Reconstructor(const RunConfig& cfg, std::shared_ptr<const SamplePlan> plan)
    : cfg_(cfg),
      plan_(plan ? std::move(plan)
                 : std::make_shared<const SamplePlan>(
                       make_sample_plan(cfg.trajectory, cfg.hash, cfg.height, cfg.width, cfg.depth))),
      hash_(store_, cfg.hash),
      pos_(store_, cfg.hash.output_dim(), cfg.field.width),
      extractor_(store_, cfg.vit),
      field_(store_, cfg.field),
      unet_(store_, cfg.unet) {
  cfg_.validate();
  if (plan_->volume_shape != Shape{1, cfg.height, cfg.width, cfg.depth}) {
    throw std::invalid_argument("model: sample plan was built for a different volume");
  }
}

template <typename T>
void Reconstructor<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  hash_.init(rng);
  pos_.init(rng);
  extractor_.init(rng);
  field_.init(rng);
  unet_.init(rng);
}

template <typename T>
ModelOutput<T> Reconstructor<T>::forward(Graph<T>& g, const Tensor<float>& px) const {
  const Shape expect{cfg_.trajectory.rows, cfg_.trajectory.cols};
  if (px.shape() != expect) {
    throw std::invalid_argument("model: panoramic image " + shape_str(px.shape()) + " does not match " +
                                shape_str(expect));
  }
  auto image = scale(g.constant(px.cast<T>().reshaped({1, expect[0], expect[1]})), T(1) / T(255));
  auto f_img = extractor_.project_img(g, extractor_(g, image));
  auto f_pos = pos_(g, hash_.encode(g, plan_->lookup));
  auto dens = field_.density(g, field_.fuse(f_img, f_pos, plan_->sample_pixel));
  ModelOutput<T> out;
  out.coarse = assemble_volume(dens, *plan_);
  out.refined = unet_(g, out.coarse);
  return out;
}

template class Reconstructor<float>;
template class Reconstructor<double>;

}  // namespace nebla
