// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "nebla/error.hpp"
#include "nebla/geometry.hpp"

using namespace nebla;

namespace {

const double kPi = std::acos(-1.0);

// Dense scan of the half-ray; returns the first inside run.
std::pair<double, double> scan_interval(const Vec3& o, const Vec3& d, const TrajectoryConfig& c, double step) {
  double lo = -1, hi = -1;
  for (double t = 0; t < 400; t += step) {
    const bool in = in_horseshoe(c, o[0] + t * d[0], o[1] + t * d[1], 0.0);
    if (in && lo < 0) lo = t;
    if (in) hi = t;
    if (!in && lo >= 0) break;
  }
  return {lo, hi};
}

}  // namespace

TEST(BuildRays, CircleTangentsArePerpendicularToRadius) {
  TrajectoryConfig c;
  c.a_t = c.b_t = 10;
  c.a_i = c.b_i = 20;
  c.a_o = c.b_o = 30;
  for (const Ray& r : build_rays(c)) {
    const double rx = r.origin[0] - c.x0, ry = r.origin[1] - c.y0;
    EXPECT_NEAR(rx * r.dir[0] + ry * r.dir[1], 0.0, 1e-9);
  }
}

TEST(BuildRays, TwoColumnsHitSweepEndpoints) {
  TrajectoryConfig c;
  c.cols = 2;
  c.sweep_start = 0.0;
  EXPECT_DOUBLE_EQ(tangency_parameter(c, 0), 0.0);
  EXPECT_DOUBLE_EQ(tangency_parameter(c, 1), kPi);
}

TEST(BuildRays, DirectionsAreUnitAndRowsSpanZBand) {
  TrajectoryConfig c;
  const auto rays = build_rays(c);
  ASSERT_EQ(rays.size(), c.rows * c.cols);
  for (const Ray& r : rays) {
    EXPECT_NEAR(std::hypot(r.dir[0], r.dir[1], r.dir[2]), 1.0, 1e-6);
    EXPECT_EQ(r.dir[2], 0.0);
    EXPECT_DOUBLE_EQ(r.origin[2], row_height(c, r.row));
  }
  EXPECT_DOUBLE_EQ(rays.front().origin[2], c.z_min);
  EXPECT_DOUBLE_EQ(rays.back().origin[2], c.z_max);
}

TEST(BuildRays, RejectsInvalidConfig) {
  TrajectoryConfig c;
  c.a_t = 20;  // trajectory outside the inner boundary
  EXPECT_THROW(build_rays(c), ConfigError);
  c = {};
  c.samples = 1;
  EXPECT_THROW(build_rays(c), ConfigError);
  c = {};
  c.sweep = 7.0;
  EXPECT_THROW(build_rays(c), ConfigError);
}

TEST(FocalInterval, SymmetryAxisChordIsAnalytic) {
  TrajectoryConfig c;
  const Vec3 o{c.x0, c.y0 + c.b_t, 5.0}, d{-1.0, 0.0, 0.0};
  auto iv = focal_interval(o, d, c);
  ASSERT_TRUE(iv);
  const double enter = c.a_i * std::sqrt(1 - std::pow(c.b_t / c.b_i, 2));
  const double leave = c.a_o * std::sqrt(1 - std::pow(c.b_t / c.b_o, 2));
  EXPECT_NEAR(iv->first, enter, 1e-9);
  EXPECT_NEAR(iv->second, leave, 1e-9);
}

TEST(FocalInterval, MatchesDenseScanOnEveryColumn) {
  TrajectoryConfig c;
  c.rows = 1;
  for (const Ray& r : build_rays(c)) {
    const auto [lo, hi] = scan_interval(r.origin, r.dir, c, 1e-3);
    if (r.empty) {
      EXPECT_LT(lo, 0) << "col " << r.col;
      continue;
    }
    EXPECT_NEAR(r.t_min, lo, 2e-3) << "col " << r.col;
    EXPECT_NEAR(r.t_max, hi, 2e-3) << "col " << r.col;
  }
}

TEST(FocalInterval, EmptyWhenRayMissesHorseshoe) {
  TrajectoryConfig c;
  EXPECT_FALSE(focal_interval({200.0, 200.0, 0.0}, {1.0, 0.0, 0.0}, c));
  EXPECT_FALSE(focal_interval({c.x0, c.y0 - 5.0, 0.0}, {0.0, -1.0, 0.0}, c));
}

TEST(FocalInterval, ShrinksWithTheAnnulus) {
  TrajectoryConfig c;
  const Vec3 o{c.x0, c.y0 + c.b_t, 0.0}, d{-1.0, 0.0, 0.0};
  double prev = 1e9;
  for (double gap : {8.0, 2.0, 0.5, 1e-3}) {
    c.a_o = c.a_i + gap;
    c.b_o = c.b_i + gap;
    auto iv = focal_interval(o, d, c);
    ASSERT_TRUE(iv);
    const double len = iv->second - iv->first;
    EXPECT_LT(len, prev);
    prev = len;
  }
  EXPECT_LT(prev, 0.01);
}

TEST(SamplePoints, SpacingAndEndpoints) {
  Ray r;
  r.origin = {0, 0, 0};
  r.dir = {1, 0, 0};
  r.t_min = 0;
  r.t_max = 95;
  r.empty = false;
  const auto p = sample_points(r, 96);
  for (std::size_t s = 0; s < 96; ++s) EXPECT_DOUBLE_EQ(p[s][0], double(s));
  const auto two = sample_points(r, 2);
  EXPECT_EQ(two[0][0], 0.0);
  EXPECT_EQ(two[1][0], 95.0);
  EXPECT_THROW(sample_points(r, 1), std::invalid_argument);
}

TEST(SamplePoints, SampleEconomyAgainstTwoHundred) {
  TrajectoryConfig c;
  EXPECT_EQ(c.samples, 96u);
  EXPECT_DOUBLE_EQ(sample_reduction(c.samples, 200), 0.52);
}

TEST(SampleSet, PointsInsideHorseshoeWithConstantSpacing) {
  TrajectoryConfig c;
  const auto rays = build_rays(c);
  for (const Ray& r : rays) {
    if (r.empty) continue;
    const auto p = sample_points(r, c.samples);
    const double dt = (r.t_max - r.t_min) / (c.samples - 1);
    for (std::size_t s = 0; s < p.size(); ++s) {
      ASSERT_TRUE(in_horseshoe(c, p[s][0], p[s][1], 1e-6)) << "row " << r.row << " col " << r.col << " s " << s;
      if (s) {
        EXPECT_NEAR(std::hypot(p[s][0] - p[s - 1][0], p[s][1] - p[s - 1][1]), dt, 1e-6);
      }
    }
  }
  const SampleSet a = build_samples(c), b = build_samples(c);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.point_count(), a.ray_count() * 96);
}

TEST(NoIntersection, DefaultConfigPasses) {
  const auto rep = validate_no_intersection(TrajectoryConfig{});
  EXPECT_TRUE(rep.pass) << rep.message;
  EXPECT_GT(rep.pairs_checked, 0u);
}

TEST(NoIntersection, IdenticalRaysFail) {
  Ray r;
  r.origin = {0, 0, 0};
  r.dir = {1, 0, 0};
  r.t_min = 1;
  r.t_max = 5;
  r.empty = false;
  Ray s = r;
  s.col = 1;
  const auto rep = validate_no_intersection(std::vector<Ray>{r, s});
  EXPECT_FALSE(rep.pass);
  EXPECT_EQ(rep.col_b, 1u);
}

TEST(NoIntersection, ParallelDistinctRaysPass) {
  Ray r;
  r.origin = {0, 0, 0};
  r.dir = {1, 0, 0};
  r.t_min = 0;
  r.t_max = 10;
  r.empty = false;
  Ray s = r;
  s.origin = {0, 1, 0};
  s.col = 1;
  EXPECT_TRUE(validate_no_intersection(std::vector<Ray>{r, s}).pass);
}

TEST(NoIntersection, CrossingSegmentsFail) {
  Ray r;
  r.origin = {0, 0, 0};
  r.dir = {1, 0, 0};
  r.t_min = 0;
  r.t_max = 10;
  r.empty = false;
  Ray s = r;
  s.origin = {5, -5, 0};
  s.dir = {0, 1, 0};
  s.col = 1;
  EXPECT_FALSE(validate_no_intersection(std::vector<Ray>{r, s}).pass);
  s.t_max = 4;  // stops short of the crossing point
  EXPECT_TRUE(validate_no_intersection(std::vector<Ray>{r, s}).pass);
}
