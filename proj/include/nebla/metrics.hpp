// SPDX-License-Identifier: Apache-2.0
//
// PSNR and SSIM with a data range of 255.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "nebla/tensor.hpp"
#include "nebla/volume.hpp"

namespace nebla {

// 10 log10(255^2 / MSE); +inf when the inputs are identical.
double psnr(std::span<const float> a, std::span<const float> b);
double psnr(const Volume& a, const Volume& b);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double data_range = 255.0;
};

// Mean local SSIM over all window positions fully inside the image
// (no padding). Images are [H, W]; throws std::invalid_argument when
// either side is smaller than the window.
double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opts = {});
// Mean of ssim over axial slices (fixed depth index), each an [H, W] image.
double ssim(const Volume& a, const Volume& b, const SsimOptions& opts = {});

// Shrinks the window to the largest odd size that fits an h x w image, with
// sigma scaled in proportion. Options that already fit are returned unchanged.
SsimOptions fit_window(SsimOptions opts, std::size_t h, std::size_t w);

struct MetricCase {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricCase> cases;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;  // as fractions

  void add(MetricCase c);
  void finalize();  // sample (n - 1) standard deviation; 0 for a single case
  std::string csv() const;
  std::string table() const;  // "PSNR 23.48 +- 0.12 dB | SSIM 74.93 +- 0.40 %"
};

// Formats doubles the way reports do, with "inf" for infinities.
std::string format_metric(double v, int precision = 4);

}  // namespace nebla
