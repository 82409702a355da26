// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "nebla/config.hpp"
#include "nebla/gradcheck.hpp"
#include "nebla/model.hpp"
#include "nebla/projector.hpp"

using namespace nebla;

namespace {

Tensor<float> micro_px(const RunConfig& cfg, const SamplePlan& plan) {
  const Volume gt = preprocess(make_phantom(cfg.phantom_spec(1)));
  return render_px(gt, plan.samples, resolve_mu_scale(cfg.mu_scale, plan.samples));
}

}  // namespace

TEST(Model, MicroForwardShapesAndMask) {
  const auto cfg = preset_config("micro");
  Reconstructor<float> m(cfg);
  m.init(7);
  const auto px = micro_px(cfg, *m.plan());
  Graph<float> g;
  const auto out = m.forward(g, px);
  const Shape vol{1, 8, 16, 16};
  EXPECT_EQ(out.coarse.shape(), vol);
  EXPECT_EQ(out.refined.shape(), vol);
  const auto& mask = m.plan()->mask;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) {
      ASSERT_EQ(out.coarse.value()[i], 0.0f) << "voxel " << i;
    } else {
      ASSERT_GT(out.coarse.value()[i], 0.0f);
    }
  }
  for (float v : out.refined.value().data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 255.0f);
  }
  Graph<float> h;
  EXPECT_THROW(m.forward(h, Tensor<float>({8, 8})), std::invalid_argument);
}

TEST(Model, InitIsSeededAndDoubleCopyAgrees) {
  const auto cfg = preset_config("micro");
  Reconstructor<float> a(cfg), b(cfg, nullptr), c(cfg);
  a.init(3);
  b.init(3);
  c.init(4);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
  EXPECT_FALSE(a.params()[0].value == c.params()[0].value);
  EXPECT_EQ(a.params()[0].name, "hash.table0");
  Reconstructor<double> d(cfg, a.plan());
  d.copy_from(a);
  const auto px = micro_px(cfg, *a.plan());
  Graph<float> gf;
  Graph<double> gd;
  const auto rf = a.forward(gf, px).refined.value();
  const auto rd = d.forward(gd, px).refined.value();
  for (std::size_t i = 0; i < rf.size(); ++i) EXPECT_NEAR(rf[i], rd[i], 0.05);
}

TEST(Model, EveryParameterReceivesGradient) {
  const auto cfg = preset_config("micro");
  Reconstructor<float> m(cfg);
  m.init(11);
  const auto px = micro_px(cfg, *m.plan());
  Graph<float> g;
  g.backward(sum(m.forward(g, px).refined));
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& p = m.params()[i];
    double norm = 0;
    for (float x : p.grad.data()) norm += std::abs(x);
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(Model, MicroPipelineGradientsMatchFiniteDifferences) {
  const auto cfg = preset_config("micro");
  Reconstructor<float> f(cfg);
  f.init(5);
  Reconstructor<double> m(cfg, f.plan());
  m.copy_from(f);
  const auto px = micro_px(cfg, *f.plan());
  const Volume gt = preprocess(make_phantom(cfg.phantom_spec(2)));
  FeatureNetwork<double> net(cfg.perc);
  auto loss = [&](Graph<double>& g) {
    return loss_total(m.forward(g, px).refined, g.constant(gt.data.cast<double>()), cfg.loss, net).total;
  };
  GradCheckOptions o;
  o.max_entries_per_tensor = 6;
  const auto r = gradcheck(m.params(), loss, o);
  EXPECT_TRUE(r.pass) << r.worst_entry << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  EXPECT_GT(r.checked, 400u);
}
