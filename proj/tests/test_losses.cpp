// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "nebla/error.hpp"
#include "nebla/gradcheck.hpp"
#include "nebla/losses.hpp"

using namespace nebla;

namespace {

Tensor<double> random_volume(Shape s, std::mt19937_64& rng) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(0, 255);
  for (auto& x : t.data()) x = u(rng);
  return t;
}

// Exhaustive MIP of a [1, H, W, D] tensor along one of the volume axes 1..3.
std::vector<double> brute_mip(const Tensor<double>& v, int axis) {
  const std::size_t H = v.dim(1), W = v.dim(2), D = v.dim(3);
  std::vector<double> out;
  const std::size_t ext[3] = {H, W, D};
  const int a = axis - 1, b = a == 0 ? 1 : 0, c = a == 2 ? 1 : 2;
  for (std::size_t i = 0; i < ext[b]; ++i)
    for (std::size_t j = 0; j < ext[c]; ++j) {
      double m = -1e300;
      for (std::size_t k = 0; k < ext[a]; ++k) {
        std::size_t idx[3];
        idx[a] = k;
        idx[b] = i;
        idx[c] = j;
        m = std::max(m, v[(idx[0] * W + idx[1]) * D + idx[2]]);
      }
      out.push_back(m);
    }
  return out;
}

double scalar(Var<double> v) { return v.value()[0]; }

}  // namespace

TEST(LossMse, ZeroOffsetAndOracle) {
  std::mt19937_64 rng(1);
  const auto a = random_volume({1, 3, 4, 5}, rng);
  const auto b = random_volume({1, 3, 4, 5}, rng);
  Graph<double> g;
  EXPECT_EQ(scalar(loss_mse(g.constant(a), g.constant(a))), 0.0);
  Tensor<double> shifted = a;
  for (auto& x : shifted.data()) x += 7.0;
  EXPECT_NEAR(scalar(loss_mse(g.constant(shifted), g.constant(a))), 49.0, 1e-9);
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(scalar(loss_mse(g.constant(a), g.constant(b))), se / a.size(), 1e-9);
  EXPECT_THROW(loss_mse(g.constant(a), g.constant(Tensor<double>({1, 3, 4, 4}))), std::invalid_argument);
}

TEST(LossProj, MatchesBruteForceMipThenSsd) {
  std::mt19937_64 rng(2);
  const auto a = random_volume({1, 3, 4, 5}, rng);
  const auto b = random_volume({1, 3, 4, 5}, rng);
  double expected = 0;
  for (int axis : {1, 2, 3}) {
    const auto ma = brute_mip(a, axis), mb = brute_mip(b, axis);
    for (std::size_t i = 0; i < ma.size(); ++i) expected += (ma[i] - mb[i]) * (ma[i] - mb[i]);
  }
  Graph<double> g;
  EXPECT_NEAR(scalar(loss_proj(g.constant(a), g.constant(b))), expected, 1e-9 * expected);
  EXPECT_EQ(scalar(loss_proj(g.constant(a), g.constant(a))), 0.0);
}

TEST(LossProj, SingleBrightVoxelCountsOncePerPlane) {
  Tensor<double> a({1, 4, 4, 4}), b({1, 4, 4, 4});
  b[(1 * 4 + 2) * 4 + 3] = 50.0;
  Graph<double> g;
  EXPECT_DOUBLE_EQ(scalar(loss_proj(g.constant(a), g.constant(b))), 3 * 50.0 * 50.0);
}

TEST(LossPerc, ZeroSymmetricAndRecomputed) {
  std::mt19937_64 rng(3);
  const auto a = random_volume({1, 6, 8, 10}, rng);
  const auto b = random_volume({1, 6, 8, 10}, rng);
  FeatureNetwork<double> net;
  Graph<double> g;
  EXPECT_EQ(scalar(loss_perc(g.constant(a), g.constant(a), net)), 0.0);
  const double ab = scalar(loss_perc(g.constant(a), g.constant(b), net));
  const double ba = scalar(loss_perc(g.constant(b), g.constant(a), net));
  EXPECT_GT(ab, 0.0);
  EXPECT_NEAR(ab, ba, 1e-12 * ab);
  // Run the network separately on each MIP and difference the taps here.
  double expected = 0;
  for (Plane p : {Plane::Axial, Plane::Sagittal, Plane::Coronal}) {
    Graph<double> ga, gb;
    const auto fa = net.features(ga, mip(ga.constant(a), p));
    const auto fb = net.features(gb, mip(gb.constant(b), p));
    ASSERT_EQ(fa.size(), 3u);
    for (std::size_t k = 0; k < fa.size(); ++k)
      for (std::size_t i = 0; i < fa[k].size(); ++i) expected += std::pow(fa[k].value()[i] - fb[k].value()[i], 2);
  }
  EXPECT_NEAR(ab, expected, 1e-9 * expected);
}

TEST(FeatureNetwork, SameSeedSameFeatures) {
  std::mt19937_64 rng(4);
  const auto img = random_volume({1, 9, 7}, rng);
  FeatureNetwork<float> n1, n2;
  FeatureNetConfig other;
  other.seed = 99;
  FeatureNetwork<float> n3(other);
  Graph<float> g;
  const auto x = g.constant(img.cast<float>());
  const auto f1 = n1.features(g, x), f2 = n2.features(g, x), f3 = n3.features(g, x);
  EXPECT_EQ(f1[2].shape(), (Shape{32, 2, 1}));
  EXPECT_EQ(f1[2].value(), f2[2].value());
  EXPECT_FALSE(f1[2].value() == f3[2].value());
}

TEST(LossTotal, CompositionMatchesManualSum) {
  std::mt19937_64 rng(5);
  const auto a = random_volume({1, 4, 6, 8}, rng);
  const auto b = random_volume({1, 4, 6, 8}, rng);
  FeatureNetwork<double> net;
  Graph<double> g;
  const auto pa = g.constant(a), pb = g.constant(b);
  const double mse = scalar(loss_mse(pa, pb)), proj = scalar(loss_proj(pa, pb)), perc = scalar(loss_perc(pa, pb, net));
  LossWeights w;
  EXPECT_DOUBLE_EQ(w.proj, 1 / 1.2);
  EXPECT_DOUBLE_EQ(w.perc, 1 / 25.0);
  const auto t = loss_total(pa, pb, w, net);
  const double manual = mse + proj / 1.2 + perc / 25.0;
  EXPECT_NEAR(scalar(t.total), manual, 1e-12 * manual);
  EXPECT_EQ(scalar(t.mse), mse);
  EXPECT_EQ(scalar(t.proj), proj);
  EXPECT_EQ(scalar(t.perc), perc);
  const auto only = loss_total(pa, pb, LossWeights{0.0, 0.0}, net);
  EXPECT_EQ(scalar(only.total), mse);
  EXPECT_GT(scalar(only.perc), 0.0);
  EXPECT_THROW(loss_total(pa, pb, LossWeights{-1.0, 0.0}, net), ConfigError);
}

TEST(LossTotal, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  ParameterStore<double> s;
  auto& p = s.add("pred", {1, 3, 4, 5});
  p.value = random_volume({1, 3, 4, 5}, rng);
  const auto gt = random_volume({1, 3, 4, 5}, rng);
  FeatureNetwork<double> net;
  auto loss = [&](Graph<double>& g) { return loss_total(g.param(p), g.constant(gt), LossWeights{}, net).total; };
  const auto r = gradcheck(s, loss);
  EXPECT_TRUE(r.pass) << r.worst_entry << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  EXPECT_EQ(r.checked, 60u);
}
