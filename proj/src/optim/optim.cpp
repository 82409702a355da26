// SPDX-License-Identifier: Apache-2.0
#include "nebla/optim.hpp"

#include <algorithm>
#include <cmath>

#include "nebla/error.hpp"

namespace nebla {

void AdamConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("adam: learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam: betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam: eps must be positive");
}

template <typename T>
Adam<T>::Adam(ParameterStore<T>& params, const AdamConfig& cfg) : params_(params), cfg_(cfg), lr_(cfg.lr) {
  cfg_.validate();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_.emplace_back(params_[i].value.size(), T{});
    v_.emplace_back(params_[i].value.size(), T{});
  }
}

template <typename T>
void Adam<T>::step() {
  if (m_.size() != params_.size()) throw std::logic_error("adam: parameters were added after construction");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (T g : params_[i].grad.data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("non-finite gradient in parameter " + params_[i].name);
      }
    }
  }
  ++t_;
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_), eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.requires_grad) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    T* x = p.value.ptr();
    const T* gr = p.grad.ptr();
    for (std::size_t k = 0; k < m.size(); ++k) {
      const T g = gr[k];
      m[k] = b1 * m[k] + (1 - b1) * g;
      v[k] = b2 * v[k] + (1 - b2) * g * g;
      const T mh = m[k] / c1, vh = v[k] / c2;
      x[k] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

void PlateauConfig::validate() const {
  if (!(factor > 0 && factor < 1)) throw ConfigError("scheduler: factor must lie in (0, 1)");
  if (patience == 0) throw ConfigError("scheduler: patience must be at least 1");
  if (!(min_lr >= 0)) throw ConfigError("scheduler: min lr must be non-negative");
}

PlateauScheduler::PlateauScheduler(const PlateauConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

double PlateauScheduler::step(double val_loss, double lr) {
  if (!std::isfinite(val_loss)) throw NumericalError("scheduler: validation loss is not finite");
  if (val_loss < best) {
    best = val_loss;
    bad_epochs = 0;
    return lr;
  }
  if (++bad_epochs < cfg_.patience) return lr;
  bad_epochs = 0;
  return std::max(lr * cfg_.factor, cfg_.min_lr);
}

bool EarlyStopping::step(double val_loss) {
  if (val_loss < best) {
    best = val_loss;
    bad_epochs = 0;
    return false;
  }
  return ++bad_epochs >= patience_;
}

}  // namespace nebla
