// SPDX-License-Identifier: Apache-2.0
//
// Beer-Lambert panoramic rendering and maximum intensity projections.

#pragma once

#include <string>

#include "nebla/autodiff.hpp"
#include "nebla/geometry.hpp"
#include "nebla/volume.hpp"

namespace nebla {

// Trilinear read of channel 0 at (x, y, z) in the geometry frame. Corners
// outside the grid contribute zero.
double sample_trilinear(const Volume& vol, double x, double y, double z);

// Resolves the attenuation scale: a non-negative value is used as is, a
// negative value selects 4 / mean path length of the bundle.
double resolve_mu_scale(double requested, const SampleSet& samples);

// Per pixel A = dt * sum_s mu(P_s) with mu = mu_scale * density / 255, then
// pixel = 255 * (1 - exp(-A)). Pixels without a focal interval stay 0.
// Result has shape [rows, cols].
Tensor<float> render_px(const Volume& vol, const SampleSet& samples, double mu_scale);

enum class Plane { Axial, Sagittal, Coronal };

Plane parse_plane(const std::string& name);
const char* plane_name(Plane p);
// Volume axis (in [C,H,W,D]) removed by each projection: axial reduces D,
// sagittal reduces W, coronal reduces H.
int plane_axis(Plane p);

// MIP of channel 0: axial [H, W], sagittal [H, D], coronal [W, D].
Tensor<float> mip(const Volume& vol, Plane plane);

// Differentiable MIP of a [1, H, W, D] node; output keeps the channel axis.
template <typename T>
Var<T> mip(Var<T> vol, Plane plane) {
  return max_reduce(vol, plane_axis(plane));
}

}  // namespace nebla
