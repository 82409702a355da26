// SPDX-License-Identifier: Apache-2.0
#include "nebla/refiner.hpp"

#include <algorithm>

#include "nebla/error.hpp"
#include "nebla/init.hpp"

namespace nebla {

void UNetConfig::validate() const {
  if (channels.empty()) throw ConfigError("unet: need at least one level");
  if (std::find(channels.begin(), channels.end(), std::size_t{0}) != channels.end()) {
    throw ConfigError("unet: channel counts must be positive");
  }
  if (!(beta > 0)) throw ConfigError("unet: swish beta must be positive");
}

template <typename T>
UNet3D<T>::UNet3D(ParameterStore<T>& s, const UNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& ch = cfg_.channels;
  const std::size_t L = ch.size();
  auto conv = [&](const std::string& name, Shape shape, bool bias) {
    Conv c;
    const std::size_t co = shape[0];
    c.w = &s.add(name + ".weight", std::move(shape));
    if (bias) c.b = &s.add(name + ".bias", {co});
    return c;
  };
  // Convolutions feeding an instance norm carry no bias; the norm removes it.
  for (std::size_t k = 0; k < L; ++k) {
    const std::string pre = "unet.enc" + std::to_string(k);
    const std::size_t in = k == 0 ? 1 : ch[k - 1];
    enc_.emplace_back(conv(pre + ".c1", {ch[k], in, 3, 3, 3}, false), conv(pre + ".c2", {ch[k], ch[k], 3, 3, 3}, false));
    down_.push_back(conv("unet.down" + std::to_string(k), {ch[k], ch[k], 2, 2, 2}, true));
  }
  for (std::size_t k = L; k-- > 0;) {
    const std::size_t below = ch[k];  // channels arriving from the deeper level
    const std::string pre = "unet.dec" + std::to_string(k);
    Conv up;
    up.w = &s.add("unet.up" + std::to_string(k) + ".weight", {k + 1 < L ? ch[k + 1] : below, ch[k], 2, 2, 2});
    up.b = &s.add("unet.up" + std::to_string(k) + ".bias", {ch[k]});
    up_.push_back(up);
    dec_.emplace_back(conv(pre + ".c1", {ch[k], 2 * ch[k], 3, 3, 3}, false),
                      conv(pre + ".c2", {ch[k], ch[k], 3, 3, 3}, false));
  }
  final_ = conv("unet.final", {1, ch[0], 1, 1, 1}, true);
}

template <typename T>
void UNet3D<T>::init(std::mt19937_64& rng) {
  auto he = [&](Conv& c) {
    const auto& s = c.w->value.shape();
    init_fan_in(*c.w, s[1] * s[2] * s[3] * s[4], rng);
    if (c.b) init_constant(*c.b, 0.0);
  };
  for (auto& [a, b] : enc_) {
    he(a);
    he(b);
  }
  for (auto& c : down_) he(c);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    // Transposed weights are [Ci, Co, 2, 2, 2]; each output voxel sees Ci inputs.
    init_fan_in(*up_[i].w, up_[i].w->value.dim(0), rng);
    init_constant(*up_[i].b, 0.0);
    he(dec_[i].first);
    he(dec_[i].second);
  }
  he(final_);
}

template <typename T>
void UNet3D<T>::check_dims(const Shape& shape) const {
  const std::size_t f = std::size_t{1} << cfg_.levels();
  if (shape.size() != 4 || shape[0] != 1) throw ConfigError("unet: input must be [1, H, W, D], got " + shape_str(shape));
  for (std::size_t a = 1; a < 4; ++a) {
    if (shape[a] % f) {
      throw ConfigError("unet: volume dims " + shape_str(shape) + " are not divisible by 2^" +
                        std::to_string(cfg_.levels()));
    }
  }
}

template <typename T>
Var<T> UNet3D<T>::block(Graph<T>& g, const Conv& c, Var<T> x) const {
  auto y = conv3d(x, g.param(*c.w), std::nullopt, 1, 1);
  return swish(instance_norm(y), static_cast<T>(cfg_.beta));
}

template <typename T>
UNetOutput<T> UNet3D<T>::forward(Graph<T>& g, Var<T> coarse) const {
  check_dims(coarse.shape());
  UNetOutput<T> out;
  auto x = scale(coarse, T(1) / T(255));
  std::vector<Var<T>> skips;
  for (std::size_t k = 0; k < enc_.size(); ++k) {
    auto h = block(g, enc_[k].second, block(g, enc_[k].first, x));
    skips.push_back(h);
    out.skip_nodes.push_back(h.id);
    x = conv3d(h, g.param(*down_[k].w), std::optional(g.param(*down_[k].b)), 2, 0);
  }
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const std::size_t k = enc_.size() - 1 - i;
    auto u = conv_transpose3d(x, g.param(*up_[i].w), std::optional(g.param(*up_[i].b)), 2, 0);
    auto cat = concat<T>({u, skips[k]}, 0);
    x = block(g, dec_[i].second, block(g, dec_[i].first, cat));
  }
  auto logit = conv3d(x, g.param(*final_.w), std::optional(g.param(*final_.b)), 1, 0);
  out.volume = scale(sigmoid(logit), T(255));
  return out;
}

template <typename T>
std::vector<std::size_t> skip_usage(const Graph<T>& g, const std::vector<int>& skip_nodes) {
  std::vector<std::size_t> uses(skip_nodes.size(), 0);
  for (std::size_t id = 0; id < g.size(); ++id) {
    const auto& n = g.node(static_cast<int>(id));
    if (n.op != "concat") continue;
    for (int in : n.inputs) {
      for (std::size_t k = 0; k < skip_nodes.size(); ++k) uses[k] += in == skip_nodes[k];
    }
  }
  return uses;
}

template class UNet3D<float>;
template class UNet3D<double>;
template std::vector<std::size_t> skip_usage(const Graph<float>&, const std::vector<int>&);
template std::vector<std::size_t> skip_usage(const Graph<double>&, const std::vector<int>&);

}  // namespace nebla
