// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of backward() in double precision.

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "nebla/autodiff.hpp"

namespace nebla {

struct GradCheckOptions {
  double step = 1e-3;
  double rtol = 1e-3;
  // Absolute floor as a multiple of the round-off in the loss difference,
  // eps * |L| / step. Keeps entries with near-zero gradient from failing on noise.
  double roundoff_factor = 64.0;
  // Tensors larger than this are checked on a subset: the largest-gradient
  // entries plus uniformly drawn ones. 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  bool pass = true;
  std::size_t checked = 0;
  double worst_excess = 0.0;  // max of |a-n| / tolerance; pass iff <= 1
  std::string worst_entry;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using LossBuilder = std::function<Var<double>(Graph<double>&)>;

GradCheckResult gradcheck(ParameterStore<double>& params, const LossBuilder& loss, const GradCheckOptions& opts = {});

}  // namespace nebla
