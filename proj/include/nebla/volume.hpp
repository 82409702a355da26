// SPDX-License-Identifier: Apache-2.0
//
// Density volumes: preprocessing, procedural jaw phantoms and file I/O.

#pragma once

#include <cstdint>
#include <string>

#include "nebla/geometry.hpp"
#include "nebla/tensor.hpp"

namespace nebla {

// Dense density grid of shape [C, H, W, D] (C = 1), row-major.
struct Volume {
  Tensor<float> data;
  double spacing_mm = 1.0;  // informational only; not stored on disk

  Volume() = default;
  explicit Volume(Tensor<float> t, double spacing = 1.0);
  Volume(std::size_t h, std::size_t w, std::size_t d, float fill = 0.0f);

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  std::size_t depth() const { return data.dim(3); }
  std::size_t index(std::size_t h, std::size_t w, std::size_t d) const { return (h * width() + w) * depth() + d; }
  float& at(std::size_t h, std::size_t w, std::size_t d) { return data[index(h, w, d)]; }
  float at(std::size_t h, std::size_t w, std::size_t d) const { return data[index(h, w, d)]; }
};

struct PreprocessOptions {
  double low_percentile = 1.0;
  double high_percentile = 99.9;
  bool log_compress = false;  // log1p(x - min) between clipping and standardization
};

// Linear-interpolated empirical percentile, position q/100 * (n - 1) in sorted order.
double percentile(std::vector<float> values, double q);

// Clip to percentiles, standardize, then rescale to [0, 255]. Throws DataError
// when the clipped volume is constant.
Volume preprocess(const Volume& raw, const PreprocessOptions& opts = {});

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::size_t height = 32, width = 64, depth = 64;
  // Horseshoe support, in the geometry frame (x = W axis, y = D axis).
  double x0 = 31.5, y0 = 12.0;
  double a_i = 18.0, b_i = 30.0, a_o = 28.0, b_o = 44.0;
  double z_lo = 6.0, z_hi = 25.0;
  std::size_t teeth = 12;
  double tooth_radius_min = 3.0, tooth_radius_max = 4.5;
  float bone = 110.0f, cortex = 150.0f, tooth = 230.0f;
  double cortex_thickness = 1.5;  // band along both ellipse boundaries

  void validate() const;
  TrajectoryConfig support() const;  // horseshoe used for membership tests
};

// Deterministic phantom: bone-filled horseshoe with a denser rim and spherical
// teeth clipped to the support. Zero outside the horseshoe.
Volume make_phantom(const PhantomSpec& spec);

// Binary format: 16-byte magic "VNBLAVOL1\0" (zero padded), dims C,H,W,D as
// u32 little-endian, then C*H*W*D little-endian float32 values.
void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

// One [W, D] PGM per height slice, named <prefix>_hNNN.pgm.
void export_slices_pgm(const Volume& v, const std::string& prefix);

}  // namespace nebla
