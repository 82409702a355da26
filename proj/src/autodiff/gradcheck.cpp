// SPDX-License-Identifier: Apache-2.0
#include "nebla/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace nebla {

namespace {

double evaluate(const LossBuilder& loss) {
  Graph<double> g(false);
  return loss(g).value()[0];
}

std::vector<std::size_t> pick_entries(const Tensor<double>& grad, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(grad.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || grad.size() <= limit) return idx;
  const std::size_t top = limit / 2;
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                    [&](std::size_t a, std::size_t b) { return std::abs(grad[a]) > std::abs(grad[b]); });
  std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top));
  std::uniform_int_distribution<std::size_t> uni(0, grad.size() - 1);
  while (chosen.size() < limit) chosen.push_back(uni(rng));
  std::sort(chosen.begin(), chosen.end());
  chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
  return chosen;
}

}  // namespace

GradCheckResult gradcheck(ParameterStore<double>& params, const LossBuilder& loss, const GradCheckOptions& opts) {
  params.zero_grad();
  double base = 0.0;
  {
    Graph<double> g(false);
    auto out = loss(g);
    base = out.value()[0];
    g.backward(out);
  }
  const double atol =
      opts.roundoff_factor * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base)) / opts.step;

  GradCheckResult res;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& prm = params[p];
    if (!prm.requires_grad) continue;
    for (std::size_t i : pick_entries(prm.grad, opts.max_entries_per_tensor, rng)) {
      const double saved = prm.value[i];
      prm.value[i] = saved + opts.step;
      const double lp = evaluate(loss);
      prm.value[i] = saved - opts.step;
      const double lm = evaluate(loss);
      prm.value[i] = saved;
      const double numeric = (lp - lm) / (2.0 * opts.step);
      const double analytic = prm.grad[i];
      const double tol = opts.rtol * std::max(std::abs(analytic), std::abs(numeric)) + atol;
      const double excess = std::abs(analytic - numeric) / tol;
      ++res.checked;
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        res.worst_entry = prm.name + "[" + std::to_string(i) + "]";
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  res.pass = res.worst_excess <= 1.0;
  return res;
}

}  // namespace nebla
