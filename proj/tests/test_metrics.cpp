// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nebla/metrics.hpp"

using namespace nebla;

namespace {

Tensor<float> random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Tensor<float> t({h, w});
  std::uniform_real_distribution<float> u(0, 255);
  for (auto& x : t.data()) x = u(rng);
  return t;
}

// Direct 2-D windowed statistics with an outer-product Gaussian.
double ssim_oracle(const Tensor<float>& a, const Tensor<float>& b) {
  const int n = 11;
  double g1[11], s = 0;
  for (int i = 0; i < n; ++i) s += g1[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
  const std::size_t H = a.dim(0), W = a.dim(1);
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + n <= H; ++y)
    for (std::size_t x = 0; x + n <= W; ++x) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double w = g1[i] * g1[j] / (s * s);
          const double va = a[(y + i) * W + x + j], vb = b[(y + i) * W + x + j];
          ma += w * va;
          mb += w * vb;
          aa += w * va * va;
          bb += w * vb * vb;
          ab += w * va * vb;
        }
      const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST(Psnr, ClosedForms) {
  std::vector<float> a(100, 10.0f), b(100, 265.0f);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(a, b), 0.0, 1e-12);
  EXPECT_EQ(format_metric(psnr(a, a)), "inf");
  EXPECT_THROW(psnr(std::span<const float>(a), std::span<const float>(b).first(10)), std::invalid_argument);
}

TEST(Psnr, MatchesRecomputationAndDecreasesWithNoise) {
  std::mt19937_64 rng(1);
  const auto a = random_image(20, 30, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {1.0, 5.0, 25.0}) {
    Tensor<float> b = a;
    std::normal_distribution<double> n(0, amp);
    for (auto& x : b.data()) x += static_cast<float>(n(rng));
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(double(a[i]) - b[i], 2);
    const double p = psnr(a.data(), b.data());
    EXPECT_NEAR(p, 10 * std::log10(65025.0 * a.size() / se), 1e-9);
    EXPECT_LT(p, prev);
    EXPECT_EQ(p, psnr(b.data(), a.data()));
    prev = p;
  }
}

TEST(Ssim, IdenticalIsOneAndOracleAgrees) {
  std::mt19937_64 rng(2);
  const auto a = random_image(16, 23, rng), b = random_image(16, 23, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-9);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_THROW(ssim(Tensor<float>({10, 30}), Tensor<float>({10, 30})), std::invalid_argument);
}

TEST(Ssim, ConstantOffsetIsLuminanceOnly) {
  Tensor<float> a({12, 12}, 100.0f), b({12, 12}, 140.0f);
  const double c1 = 6.5025;
  EXPECT_NEAR(ssim(a, b), (2 * 100.0 * 140.0 + c1) / (100.0 * 100.0 + 140.0 * 140.0 + c1), 1e-9);
}

TEST(Ssim, InvertedCheckerboardIsAnticorrelated) {
  Tensor<float> a({16, 16}), b({16, 16});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      a[i * 16 + j] = ((i / 2 + j / 2) % 2) ? 255.0f : 0.0f;
      b[i * 16 + j] = 255.0f - a[i * 16 + j];
    }
  const double s = ssim(a, b);
  EXPECT_LT(s, 0.5);
  EXPECT_NEAR(s, ssim_oracle(a, b), 1e-9);
}

TEST(Ssim, PermutationInvariantAcrossBothInputs) {
  std::mt19937_64 rng(3);
  const auto a = random_image(12, 14, rng), b = random_image(12, 14, rng);
  // Transposing both images permutes the window positions consistently.
  Tensor<float> at({14, 12}), bt({14, 12});
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 14; ++j) {
      at[j * 12 + i] = a[i * 14 + j];
      bt[j * 12 + i] = b[i * 14 + j];
    }
  EXPECT_NEAR(ssim(a, b), ssim(at, bt), 1e-12);
}

TEST(Ssim, VolumeAveragesAxialSlices) {
  std::mt19937_64 rng(4);
  Volume a(12, 13, 3), b(12, 13, 3);
  std::uniform_real_distribution<float> u(0, 255);
  for (auto& x : a.data.data()) x = u(rng);
  for (auto& x : b.data.data()) x = u(rng);
  double expected = 0;
  for (std::size_t d = 0; d < 3; ++d) {
    Tensor<float> sa({12, 13}), sb({12, 13});
    for (std::size_t h = 0; h < 12; ++h)
      for (std::size_t w = 0; w < 13; ++w) {
        sa[h * 13 + w] = a.at(h, w, d);
        sb[h * 13 + w] = b.at(h, w, d);
      }
    expected += ssim_oracle(sa, sb) / 3;
  }
  EXPECT_NEAR(ssim(a, b), expected, 1e-9);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(MetricReport, SampleStandardDeviation) {
  MetricReport r;
  r.add({"a", 20.0, 0.5});
  r.add({"b", 22.0, 0.7});
  r.add({"c", 24.0, 0.9});
  r.finalize();
  EXPECT_DOUBLE_EQ(r.psnr_mean, 22.0);
  EXPECT_DOUBLE_EQ(r.psnr_std, 2.0);
  EXPECT_NEAR(r.ssim_std, 0.2, 1e-12);
  EXPECT_EQ(r.table(), "PSNR 22.00 +- 2.00 dB | SSIM 70.00 +- 20.00 %");
  EXPECT_NE(r.csv().find("b,22.0000,70.0000"), std::string::npos);
  MetricReport empty;
  EXPECT_THROW(empty.finalize(), std::invalid_argument);
}

TEST(Ssim, FitWindowShrinksOnlyWhenNeeded) {
  const SsimOptions d;
  const auto same = fit_window(d, 32, 64);
  EXPECT_EQ(same.window, 11u);
  EXPECT_EQ(same.sigma, 1.5);
  const auto small = fit_window(d, 8, 16);
  EXPECT_EQ(small.window, 7u);
  EXPECT_NEAR(small.sigma, 1.5 * 7 / 11, 1e-12);
  Tensor<float> a({8, 16});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = float(i % 13) * 9.0f;
  EXPECT_NEAR(ssim(a, a, small), 1.0, 1e-12);
  EXPECT_THROW(fit_window(d, 2, 16), std::invalid_argument);
}
