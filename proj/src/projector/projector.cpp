// SPDX-License-Identifier: Apache-2.0
#include "nebla/projector.hpp"

#include <cmath>

#include "nebla/error.hpp"

namespace nebla {

double sample_trilinear(const Volume& vol, double x, double y, double z) {
  // Geometry frame: x -> W, y -> D, z -> H.
  const double fw = std::floor(x), fd = std::floor(y), fh = std::floor(z);
  const double tw = x - fw, td = y - fd, th = z - fh;
  const long long w0 = static_cast<long long>(fw), d0 = static_cast<long long>(fd), h0 = static_cast<long long>(fh);
  const long long H = static_cast<long long>(vol.height()), W = static_cast<long long>(vol.width()),
                  D = static_cast<long long>(vol.depth());
  double acc = 0.0;
  for (int ch = 0; ch < 2; ++ch) {
    const long long h = h0 + ch;
    if (h < 0 || h >= H) continue;
    const double wh = ch ? th : 1.0 - th;
    for (int cw = 0; cw < 2; ++cw) {
      const long long w = w0 + cw;
      if (w < 0 || w >= W) continue;
      const double ww = cw ? tw : 1.0 - tw;
      for (int cd = 0; cd < 2; ++cd) {
        const long long d = d0 + cd;
        if (d < 0 || d >= D) continue;
        const double wd = cd ? td : 1.0 - td;
        acc += wh * ww * wd * vol.at(static_cast<std::size_t>(h), static_cast<std::size_t>(w), static_cast<std::size_t>(d));
      }
    }
  }
  return acc;
}

double resolve_mu_scale(double requested, const SampleSet& samples) {
  if (requested >= 0.0) return requested;
  const double len = samples.mean_path_length();
  if (!(len > 0.0)) throw ConfigError("cannot derive mu_scale: the ray bundle has no focal intervals");
  return 4.0 / len;
}

Tensor<float> render_px(const Volume& vol, const SampleSet& samples, double mu_scale) {
  if (mu_scale < 0.0 || !std::isfinite(mu_scale)) throw ConfigError("mu_scale must be a non-negative finite value");
  Tensor<float> img({samples.rows, samples.cols});
  const std::size_t S = samples.samples;
  for (std::size_t r = 0; r < samples.ray_count(); ++r) {
    const double* p = samples.points.data() + r * S * 3;
    double sum = 0.0;
    for (std::size_t s = 0; s < S; ++s) sum += sample_trilinear(vol, p[3 * s], p[3 * s + 1], p[3 * s + 2]);
    const double attenuation = samples.ray_dt[r] * mu_scale * sum / 255.0;
    img[samples.ray_pixel[r]] = static_cast<float>(255.0 * -std::expm1(-attenuation));
  }
  return img;
}

Plane parse_plane(const std::string& name) {
  if (name == "axial") return Plane::Axial;
  if (name == "sagittal") return Plane::Sagittal;
  if (name == "coronal") return Plane::Coronal;
  throw std::invalid_argument("unknown projection plane '" + name + "' (expected axial, sagittal or coronal)");
}

const char* plane_name(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Sagittal: return "sagittal";
    case Plane::Coronal: return "coronal";
  }
  return "?";
}

int plane_axis(Plane p) {
  switch (p) {
    case Plane::Axial: return 3;
    case Plane::Sagittal: return 2;
    case Plane::Coronal: return 1;
  }
  throw std::invalid_argument("invalid plane");
}

Tensor<float> mip(const Volume& vol, Plane plane) {
  Graph<float> g;
  auto out = max_reduce(g.constant(vol.data), plane_axis(plane));
  const Shape& s = out.shape();
  return out.value().reshaped({s[1], s[2]});
}

}  // namespace nebla
