// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <random>

#include "nebla/error.hpp"
#include "nebla/field.hpp"
#include "nebla/gradcheck.hpp"

using namespace nebla;

namespace {

TrajectoryConfig micro_trajectory() {
  TrajectoryConfig t;
  t.x0 = 7.5;
  t.y0 = 4.0;
  t.a_t = 3.0;
  t.b_t = 4.5;
  t.a_i = 4.0;
  t.b_i = 6.0;
  t.a_o = 7.0;
  t.b_o = 10.0;
  t.rows = 8;
  t.cols = 16;
  t.z_min = 0.0;
  t.z_max = 7.0;
  t.samples = 8;
  return t;
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.data()) x = static_cast<T>(u(rng));
  return t;
}

std::shared_ptr<const std::vector<std::uint32_t>> random_index(std::size_t n, std::uint32_t range,
                                                               std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> u(0, range - 1);
  auto v = std::make_shared<std::vector<std::uint32_t>>(n);
  for (auto& x : *v) x = u(rng);
  return v;
}

}  // namespace

TEST(SamplePlan, PointsMapIntoVolumeAndUnitCube) {
  const auto t = micro_trajectory();
  HashConfig h;
  h.log2_table = 10;
  const auto plan = make_sample_plan(t, h, 8, 16, 16);
  ASSERT_GT(plan.points(), 0u);
  EXPECT_EQ(plan.volume_shape, (Shape{1, 8, 16, 16}));
  EXPECT_EQ(plan.sample_pixel->size(), plan.points());
  EXPECT_EQ(plan.lookup.points, plan.points());
  for (float v : plan.lookup.normalized) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  std::size_t marked = 0;
  for (auto m : plan.mask) marked += m;
  std::vector<std::uint8_t> seen(plan.mask.size(), 0);
  for (std::size_t i = 0; i < plan.points(); ++i) {
    const double* p = &plan.samples.points[3 * i];
    const auto v = (*plan.sample_voxel)[i];
    // Brute-force nearest voxel center.
    double best = 1e9;
    std::size_t arg = 0;
    for (std::size_t z = 0; z < 8; ++z)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t y = 0; y < 16; ++y) {
          const double d = std::pow(p[0] - x, 2) + std::pow(p[1] - y, 2) + std::pow(p[2] - z, 2);
          if (d < best - 1e-12) {
            best = d;
            arg = (z * 16 + x) * 16 + y;
          }
        }
    const double dv = std::pow(p[0] - double(v / 16 % 16), 2) + std::pow(p[1] - double(v % 16), 2) +
                      std::pow(p[2] - double(v / 256), 2);
    EXPECT_NEAR(dv, best, 1e-9) << "sample " << i << " nearest " << arg;
    seen[v] = 1;
    EXPECT_EQ((*plan.sample_pixel)[i], plan.samples.ray_pixel[i / t.samples]);
  }
  EXPECT_EQ(seen, plan.mask);
  EXPECT_GT(marked, 0u);
}

TEST(SamplePlan, VolumeTooSmallForTrajectoryIsDataError) {
  HashConfig h;
  h.log2_table = 10;
  EXPECT_THROW(make_sample_plan(micro_trajectory(), h, 8, 12, 12), DataError);
}

TEST(FieldConfig, RejectsBadSkipLayer) {
  FieldConfig c;
  c.skip_layer = 8;
  EXPECT_THROW(c.validate(), ConfigError);
  c.skip_layer = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DensityField, ShapesAndSkipInputWidth) {
  FieldConfig c;
  ParameterStore<float> s;
  DensityField<float> f(s, c);
  EXPECT_EQ(s.size(), 2 * c.depth + 2);
  EXPECT_EQ(f.layer_weight(4).value.shape(), (Shape{2 * c.width, c.width}));
  EXPECT_EQ(f.layer_weight(3).value.shape(), (Shape{c.width, c.width}));
}

TEST(DensityField, AllZeroParametersGiveMidScale) {
  FieldConfig c;
  ParameterStore<double> s;
  DensityField<double> f(s, c);
  std::mt19937_64 rng(1);
  Graph<double> g;
  auto out = f.density(g, g.constant(random_tensor<double>({10, c.width}, rng)));
  ASSERT_EQ(out.shape(), (Shape{10}));
  for (double v : out.value().data()) EXPECT_DOUBLE_EQ(v, 127.5);
}

TEST(DensityField, OutputsStayInOpenRange) {
  FieldConfig c;
  ParameterStore<float> s;
  DensityField<float> f(s, c);
  std::mt19937_64 rng(2);
  f.init(rng);
  Graph<float> g;
  auto out = f.density(g, g.constant(random_tensor<float>({500, c.width}, rng, -20, 20)));
  for (float v : out.value().data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 255.0f);
  }
}

TEST(DensityField, FuseIsGatherPlusPosition) {
  FieldConfig c;
  c.width = 3;
  c.depth = 2;
  c.skip_layer = 1;
  ParameterStore<double> s;
  DensityField<double> f(s, c);
  std::mt19937_64 rng(3);
  const auto img = random_tensor<double>({5, 3}, rng);
  const auto pos = random_tensor<double>({7, 3}, rng);
  const auto pix = random_index(7, 5, rng);
  Graph<double> g;
  auto out = f.fuse(g.constant(img), g.constant(pos), pix);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_DOUBLE_EQ(out.value()[i * 3 + k], img[(*pix)[i] * 3 + k] + pos[i * 3 + k]);
  EXPECT_THROW(f.fuse(g.constant(img), g.constant(Tensor<double>({7, 4})), pix), std::invalid_argument);
}

TEST(DensityField, GradientsIncludingSkipPathMatchFiniteDifferences) {
  FieldConfig c;
  c.width = 4;
  c.depth = 4;
  c.skip_layer = 2;
  ParameterStore<double> s;
  DensityField<double> f(s, c);
  std::mt19937_64 rng(4);
  f.init(rng);
  auto& img = s.add("img", {6, 4});
  auto& pos = s.add("pos", {9, 4});
  img.value = random_tensor<double>({6, 4}, rng);
  pos.value = random_tensor<double>({9, 4}, rng);
  const auto pix = random_index(9, 6, rng);
  const auto w = random_tensor<double>({9}, rng);
  auto loss = [&](Graph<double>& g) {
    return sum(mul(f.density(g, f.fuse(g.param(img), g.param(pos), pix)), g.constant(w)));
  };
  const auto r = gradcheck(s, loss);
  EXPECT_TRUE(r.pass) << r.worst_entry << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;

  // Cutting every pre-skip weight must leave a gradient on the inputs via the skip.
  for (std::size_t l = 0; l < c.skip_layer; ++l) f.layer_weight(l).value.fill(0.0);
  s.zero_grad();
  Graph<double> g;
  g.backward(loss(g));
  double norm = 0;
  for (double v : pos.grad.data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Assemble, MeanRuleMatchesBruteForce) {
  std::mt19937_64 rng(5);
  SamplePlan plan;
  plan.volume_shape = {1, 2, 3, 4};
  const std::size_t n = 60;
  plan.samples.samples = 1;
  plan.samples.ray_pixel.assign(n, 0);
  plan.sample_voxel = random_index(n, 20, rng);  // voxels 20..23 never hit
  const auto d = random_tensor<double>({n}, rng, 0, 255);
  Graph<double> g;
  auto vol = assemble_volume(g.constant(d), plan);
  ASSERT_EQ(vol.shape(), plan.volume_shape);
  std::map<std::uint32_t, std::pair<double, int>> acc;
  for (std::size_t i = 0; i < n; ++i) {
    acc[(*plan.sample_voxel)[i]].first += d[i];
    acc[(*plan.sample_voxel)[i]].second += 1;
  }
  double mass = 0, total = 0;
  for (std::uint32_t v = 0; v < 24; ++v) {
    const auto it = acc.find(v);
    const double e = it == acc.end() ? 0.0 : it->second.first / it->second.second;
    EXPECT_NEAR(vol.value()[v], e, 1e-12);
    if (it != acc.end()) mass += vol.value()[v] * it->second.second;
  }
  for (double x : d.data()) total += x;
  EXPECT_NEAR(mass, total, 1e-9);
  EXPECT_THROW(assemble_volume(g.constant(Tensor<double>({n + 1})), plan), std::invalid_argument);
}
