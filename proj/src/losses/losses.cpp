// SPDX-License-Identifier: Apache-2.0
#include "nebla/losses.hpp"

#include <random>

#include "nebla/error.hpp"

namespace nebla {

namespace {

constexpr Plane kPlanes[] = {Plane::Axial, Plane::Sagittal, Plane::Coronal};

template <typename T>
void require_volume_pair(const char* what, Var<T> pred, Var<T> gt) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument(std::string(what) + ": prediction " + shape_str(pred.shape()) +
                                " and target " + shape_str(gt.shape()) + " differ");
  }
}

template <typename T>
Var<T> ssd(Var<T> a, Var<T> b) {
  return sum(square(sub(a, b)));
}

}  // namespace

void FeatureNetConfig::validate() const {
  if (channels.empty() || in_channels == 0) throw ConfigError("feature net: need at least one stage");
  for (auto c : channels)
    if (c == 0) throw ConfigError("feature net: channel counts must be positive");
  if (!(beta > 0)) throw ConfigError("feature net: swish beta must be positive");
}

void LossWeights::validate() const {
  if (!(proj >= 0) || !(perc >= 0)) throw ConfigError("loss weights must be non-negative");
}

template <typename T>
FeatureNetwork<T>::FeatureNetwork(const FeatureNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  std::size_t in = cfg_.in_channels;
  for (std::size_t out : cfg_.channels) {
    Tensor<T> w({out, in, 3, 3});
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / (9.0 * in)));
    for (auto& v : w.data()) v = static_cast<T>(n(rng));
    weights_.push_back(std::move(w));
    biases_.emplace_back(Shape{out});
    in = out;
  }
}

template <typename T>
std::vector<Var<T>> FeatureNetwork<T>::features(Graph<T>& g, Var<T> image) const {
  if (image.shape().size() != 3 || image.shape()[0] != 1) {
    throw std::invalid_argument("feature net: expected a [1, h, w] image, got " + shape_str(image.shape()));
  }
  auto x = scale(image, T(1) / T(255));
  if (cfg_.in_channels > 1) x = concat(std::vector<Var<T>>(cfg_.in_channels, x), 0);
  std::vector<Var<T>> taps;
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    x = swish(conv2d(x, g.constant(weights_[s]), std::optional(g.constant(biases_[s])), 2, 1), static_cast<T>(cfg_.beta));
    taps.push_back(x);
  }
  return taps;
}

template <typename T>
Var<T> loss_mse(Var<T> pred, Var<T> gt) {
  require_volume_pair("loss_mse", pred, gt);
  return mean(square(sub(pred, gt)));
}

template <typename T>
Var<T> loss_proj(Var<T> pred, Var<T> gt) {
  require_volume_pair("loss_proj", pred, gt);
  std::vector<Var<T>> terms;
  for (Plane p : kPlanes) terms.push_back(ssd(mip(pred, p), mip(gt, p)));
  return add(add(terms[0], terms[1]), terms[2]);
}

template <typename T>
Var<T> loss_perc(Var<T> pred, Var<T> gt, const FeatureNetwork<T>& net) {
  require_volume_pair("loss_perc", pred, gt);
  auto& g = *pred.graph;
  std::optional<Var<T>> total;
  for (Plane p : kPlanes) {
    const auto fp = net.features(g, mip(pred, p));
    const auto fg = net.features(g, mip(gt, p));
    for (std::size_t k = 0; k < fp.size(); ++k) {
      auto t = ssd(fp[k], fg[k]);
      total = total ? add(*total, t) : t;
    }
  }
  return *total;
}

template <typename T>
LossTerms<T> loss_total(Var<T> pred, Var<T> gt, const LossWeights& w, const FeatureNetwork<T>& net) {
  w.validate();
  LossTerms<T> t;
  t.mse = loss_mse(pred, gt);
  t.proj = loss_proj(pred, gt);
  t.perc = loss_perc(pred, gt, net);
  t.total = t.mse;
  if (w.proj != 0) t.total = add(t.total, scale(t.proj, static_cast<T>(w.proj)));
  if (w.perc != 0) t.total = add(t.total, scale(t.perc, static_cast<T>(w.perc)));
  return t;
}

#define NEBLA_INSTANTIATE(T)                                                                   \
  template class FeatureNetwork<T>;                                                            \
  template Var<T> loss_mse(Var<T>, Var<T>);                                                    \
  template Var<T> loss_proj(Var<T>, Var<T>);                                                   \
  template Var<T> loss_perc(Var<T>, Var<T>, const FeatureNetwork<T>&);                         \
  template LossTerms<T> loss_total(Var<T>, Var<T>, const LossWeights&, const FeatureNetwork<T>&);
NEBLA_INSTANTIATE(float)
NEBLA_INSTANTIATE(double)
#undef NEBLA_INSTANTIATE

}  // namespace nebla
