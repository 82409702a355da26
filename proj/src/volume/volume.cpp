// SPDX-License-Identifier: Apache-2.0
#include "nebla/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "nebla/error.hpp"
#include "nebla/io.hpp"

namespace nebla {

namespace {

constexpr char kMagic[16] = "VNBLAVOL1";
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 32;

}  // namespace

Volume::Volume(Tensor<float> t, double spacing) : data(std::move(t)), spacing_mm(spacing) {
  if (data.rank() != 4) throw std::invalid_argument("volume must have shape [C,H,W,D], got " + shape_str(data.shape()));
}

Volume::Volume(std::size_t h, std::size_t w, std::size_t d, float fill) : data({1, h, w, d}, fill) {}

double percentile(std::vector<float> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty volume");
  if (q < 0.0 || q > 100.0) throw std::invalid_argument("percentile must lie in [0, 100]");
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  if (hi == lo) return vlo;
  const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

Volume preprocess(const Volume& raw, const PreprocessOptions& opts) {
  if (raw.data.empty()) throw DataError("cannot preprocess an empty volume");
  const auto& src = raw.data.storage();
  for (float v : src) {
    if (!std::isfinite(v)) throw DataError("volume contains non-finite values");
  }
  const double lo = percentile(src, opts.low_percentile);
  const double hi = percentile(src, opts.high_percentile);
  std::vector<double> x(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) x[i] = std::clamp<double>(src[i], lo, hi);
  if (opts.log_compress) {
    for (double& v : x) v = std::log1p(v - lo);
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  if (!(var > 0.0)) throw DataError("volume has zero variance after clipping");
  const double inv_std = 1.0 / std::sqrt(var);
  double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
  for (double& v : x) {
    v = (v - mean) * inv_std;
    zmin = std::min(zmin, v);
    zmax = std::max(zmax, v);
  }
  Volume out(Tensor<float>(raw.data.shape()), raw.spacing_mm);
  const double k = 255.0 / (zmax - zmin);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = static_cast<float>((x[i] - zmin) * k);
  return out;
}

void PhantomSpec::validate() const {
  if (height == 0 || width == 0 || depth == 0) throw ConfigError("phantom: dims must be positive");
  if (!(a_i > 0 && b_i > 0 && a_o > a_i && b_o > b_i)) {
    throw ConfigError("phantom: outer semi-axes must exceed inner semi-axes");
  }
  for (float v : {bone, cortex, tooth}) {
    if (!(v >= 0.0f && v <= 255.0f)) throw ConfigError("phantom: densities must lie in [0, 255]");
  }
  if (!(tooth_radius_min > 0 && tooth_radius_max >= tooth_radius_min)) {
    throw ConfigError("phantom: tooth radius range is invalid");
  }
  const double thickness = std::min(a_o - a_i, b_o - b_i);
  if (teeth > 0 && 2.0 * tooth_radius_max > thickness) {
    throw ConfigError("phantom: tooth radius exceeds half the annulus thickness");
  }
  if (z_hi < z_lo) throw ConfigError("phantom: z band is inverted");
}

TrajectoryConfig PhantomSpec::support() const {
  TrajectoryConfig t;
  t.x0 = x0;
  t.y0 = y0;
  t.a_i = a_i;
  t.b_i = b_i;
  t.a_o = a_o;
  t.b_o = b_o;
  return t;
}

Volume make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const TrajectoryConfig shoe = spec.support();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  struct Tooth {
    double x, y, z, r;
  };
  std::vector<Tooth> teeth;
  const double am = 0.5 * (spec.a_i + spec.a_o), bm = 0.5 * (spec.b_i + spec.b_o);
  const double pi = std::acos(-1.0);
  for (std::size_t k = 0; k < spec.teeth; ++k) {
    const double slot = pi / static_cast<double>(spec.teeth);
    const double phi = (static_cast<double>(k) + 0.5 + 0.6 * (uni(rng) - 0.5)) * slot;
    const double r = spec.tooth_radius_min + (spec.tooth_radius_max - spec.tooth_radius_min) * uni(rng);
    const double zc = spec.z_lo + r + (spec.z_hi - spec.z_lo - 2.0 * r) * uni(rng);
    teeth.push_back({spec.x0 + am * std::cos(phi), spec.y0 + bm * std::sin(phi), zc, r});
  }
  // Relative rim width, measured in units of the local ellipse scale.
  const double rim_o = spec.cortex_thickness / std::min(spec.a_o, spec.b_o);
  const double rim_i = spec.cortex_thickness / std::min(spec.a_i, spec.b_i);

  Volume v(spec.height, spec.width, spec.depth);
  for (std::size_t h = 0; h < spec.height; ++h) {
    const double z = static_cast<double>(h);
    if (z < spec.z_lo || z > spec.z_hi) continue;
    for (std::size_t w = 0; w < spec.width; ++w) {
      const double x = static_cast<double>(w);
      for (std::size_t d = 0; d < spec.depth; ++d) {
        const double y = static_cast<double>(d);
        if (!in_horseshoe(shoe, x, y, 0.0)) continue;
        const double dx = x - spec.x0, dy = y - spec.y0;
        const double ro = std::sqrt(dx * dx / (spec.a_o * spec.a_o) + dy * dy / (spec.b_o * spec.b_o));
        const double ri = std::sqrt(dx * dx / (spec.a_i * spec.a_i) + dy * dy / (spec.b_i * spec.b_i));
        float val = (ro > 1.0 - rim_o || ri < 1.0 + rim_i) ? spec.cortex : spec.bone;
        for (const Tooth& t : teeth) {
          const double ex = x - t.x, ey = y - t.y, ez = z - t.z;
          if (ex * ex + ey * ey + ez * ez <= t.r * t.r) {
            val = spec.tooth;
            break;
          }
        }
        v.at(h, w, d) = val;
      }
    }
  }
  return v;
}

void save_volume(const Volume& v, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  for (std::size_t e : v.data.shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
  io::write_f32_array(os, v.data.ptr(), v.data.size());
  if (!os) throw DataError("failed writing " + path);
}

Volume load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[16];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path + ": bad magic, not a volume file");
  }
  Shape shape(4);
  std::uint64_t n = 1;
  for (auto& e : shape) {
    e = io::read_u32(is, "volume dims");
    if (e == 0) throw DataError(path + ": zero volume extent");
    n *= e;
    if (n > kMaxVoxels) throw DataError(path + ": volume dims overflow");
  }
  Tensor<float> t(shape);
  io::read_f32_array(is, t.ptr(), t.size(), "volume payload");
  if (is.peek() != std::char_traits<char>::eof()) throw DataError(path + ": trailing bytes after volume payload");
  return Volume(std::move(t));
}

void export_slices_pgm(const Volume& v, const std::string& prefix) {
  for (std::size_t h = 0; h < v.height(); ++h) {
    Tensor<float> img({v.width(), v.depth()});
    std::copy_n(v.data.ptr() + v.index(h, 0, 0), img.size(), img.ptr());
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "_h%03zu.pgm", h);
    io::write_pgm(prefix + suffix, img);
  }
}

}  // namespace nebla
