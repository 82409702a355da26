// SPDX-License-Identifier: Apache-2.0
#include "nebla/field.hpp"

#include <cmath>

#include "nebla/error.hpp"
#include "nebla/init.hpp"

namespace nebla {

SamplePlan make_sample_plan(const TrajectoryConfig& traj, const HashConfig& hash, std::size_t height,
                            std::size_t width, std::size_t depth) {
  if (height < 2 || width < 2 || depth < 2) throw ConfigError("volume extents must be at least 2");
  SamplePlan plan;
  plan.samples = build_samples(traj);
  plan.volume_shape = {1, height, width, depth};
  const std::size_t n = plan.samples.point_count();
  if (n == 0) throw ConfigError("trajectory produces no samples inside the horseshoe");
  const double ext[3] = {double(width - 1), double(depth - 1), double(height - 1)};  // x, y, z

  std::vector<double> normalized(3 * n);
  auto pixel = std::make_shared<std::vector<std::uint32_t>>(n);
  auto voxel = std::make_shared<std::vector<std::uint32_t>>(n);
  plan.mask.assign(height * width * depth, 0);
  const std::size_t S = plan.samples.samples;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = &plan.samples.points[3 * i];
    long long idx[3];
    for (int a = 0; a < 3; ++a) {
      normalized[3 * i + a] = p[a] / ext[a];
      idx[a] = std::llround(p[a]);
      if (idx[a] < 0 || idx[a] > static_cast<long long>(ext[a])) {
        throw DataError("sample point lies outside the volume; trajectory and volume dims disagree");
      }
    }
    (*pixel)[i] = plan.samples.ray_pixel[i / S];
    const std::size_t v = (static_cast<std::size_t>(idx[2]) * width + static_cast<std::size_t>(idx[0])) * depth +
                          static_cast<std::size_t>(idx[1]);
    (*voxel)[i] = static_cast<std::uint32_t>(v);
    plan.mask[v] = 1;
  }
  plan.lookup = make_hash_lookup(hash, normalized);
  plan.sample_pixel = std::move(pixel);
  plan.sample_voxel = std::move(voxel);
  return plan;
}

void FieldConfig::validate() const {
  if (width == 0 || depth == 0) throw ConfigError("field: width and depth must be positive");
  if (skip_layer == 0 || skip_layer >= depth) throw ConfigError("field: skip layer must lie in [1, depth)");
  if (!(beta > 0)) throw ConfigError("field: swish beta must be positive");
}

template <typename T>
DensityField<T>::DensityField(ParameterStore<T>& s, const FieldConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t f = cfg_.width;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::size_t in = l == cfg_.skip_layer ? 2 * f : f;
    w_.push_back(&s.add("mlp.l" + std::to_string(l) + ".weight", {in, f}));
    b_.push_back(&s.add("mlp.l" + std::to_string(l) + ".bias", {f}));
  }
  out_w_ = &s.add("mlp.out.weight", {f, 1});
  out_b_ = &s.add("mlp.out.bias", {1});
}

template <typename T>
void DensityField<T>::init(std::mt19937_64& rng) {
  for (std::size_t l = 0; l < w_.size(); ++l) {
    init_fan_in(*w_[l], w_[l]->value.dim(0), rng);
    init_constant(*b_[l], 0.0);
  }
  init_fan_in(*out_w_, cfg_.width, rng);
  init_constant(*out_b_, 0.0);
}

template <typename T>
Var<T> DensityField<T>::fuse(Var<T> f_img, Var<T> f_pos,
                             const std::shared_ptr<const std::vector<std::uint32_t>>& sample_pixel) const {
  if (f_img.shape().size() != 2 || f_img.shape()[1] != cfg_.width || f_pos.shape().size() != 2 ||
      f_pos.shape()[1] != cfg_.width) {
    throw std::invalid_argument("fuse_features: widths differ, image " + shape_str(f_img.shape()) + " position " +
                                shape_str(f_pos.shape()));
  }
  return add(gather_rows(f_img, sample_pixel), f_pos);
}

template <typename T>
Var<T> DensityField<T>::density(Graph<T>& g, Var<T> fused) const {
  const T beta = static_cast<T>(cfg_.beta);
  const auto u0 = fused;
  auto u = u0;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    auto in = l == cfg_.skip_layer ? concat<T>({u, u0}, 1) : u;
    u = swish(linear(in, g.param(*w_[l]), g.param(*b_[l])), beta);
  }
  auto logit = linear(u, g.param(*out_w_), g.param(*out_b_));
  auto dens = scale(sigmoid(logit), T(255));
  return reshape(dens, {fused.shape()[0]});
}

template class DensityField<float>;
template class DensityField<double>;

}  // namespace nebla
