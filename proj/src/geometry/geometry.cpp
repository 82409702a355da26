// SPDX-License-Identifier: Apache-2.0
#include "nebla/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nebla/error.hpp"

namespace nebla {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

double ellipse_q(double dx, double dy, double a, double b) { return (dx * dx) / (a * a) + (dy * dy) / (b * b); }

// Non-negative parameters where the 2-D line o + t d meets the ellipse.
void ellipse_hits(const Vec3& o, const Vec3& d, double x0, double y0, double a, double b, std::vector<double>& out) {
  const double ex = o[0] - x0, ey = o[1] - y0;
  const double A = d[0] * d[0] / (a * a) + d[1] * d[1] / (b * b);
  const double B = 2.0 * (ex * d[0] / (a * a) + ey * d[1] / (b * b));
  const double C = ellipse_q(ex, ey, a, b) - 1.0;
  if (A <= 0.0) return;
  const double disc = B * B - 4.0 * A * C;
  if (disc < 0.0) return;
  const double q = -0.5 * (B + std::copysign(std::sqrt(disc), B));
  double r1 = q / A;
  double r2 = q != 0.0 ? C / q : r1;
  for (double r : {r1, r2}) {
    if (r >= 0.0) out.push_back(r);
  }
}

}  // namespace

void TrajectoryConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("trajectory: " + m); };
  if (!(a_t > 0 && b_t > 0)) fail("trajectory semi-axes must be positive");
  if (!(a_t < a_i && a_i < a_o)) fail("need a_t < a_i < a_o");
  if (!(b_t < b_i && b_i < b_o)) fail("need b_t < b_i < b_o");
  if (samples < 2) fail("samples per ray must be at least 2");
  if (!(sweep > 0 && sweep <= kTwoPi)) fail("sweep must lie in (0, 2*pi]");
  if (rows == 0 || cols == 0) fail("image dims must be positive");
  if (z_max < z_min) fail("z_max must not be below z_min");
  for (double v : {x0, y0, a_t, b_t, a_i, b_i, a_o, b_o, sweep, sweep_start, z_min, z_max}) {
    if (!std::isfinite(v)) fail("non-finite value");
  }
}

bool in_horseshoe(const TrajectoryConfig& cfg, double x, double y, double tol) {
  const double dx = x - cfg.x0, dy = y - cfg.y0;
  if (dy < -tol) return false;
  if (ellipse_q(dx, dy, cfg.a_o, cfg.b_o) > 1.0 + tol) return false;
  return ellipse_q(dx, dy, cfg.a_i, cfg.b_i) >= 1.0 - tol;
}

double tangency_parameter(const TrajectoryConfig& cfg, std::size_t col) {
  if (cfg.cols == 1) return cfg.sweep_start + 0.5 * cfg.sweep;
  return cfg.sweep_start + cfg.sweep * static_cast<double>(col) / static_cast<double>(cfg.cols - 1);
}

double row_height(const TrajectoryConfig& cfg, std::size_t row) {
  if (cfg.rows == 1) return 0.5 * (cfg.z_min + cfg.z_max);
  return cfg.z_min + (cfg.z_max - cfg.z_min) * static_cast<double>(row) / static_cast<double>(cfg.rows - 1);
}

std::optional<std::pair<double, double>> focal_interval(const Vec3& origin, const Vec3& dir,
                                                        const TrajectoryConfig& cfg) {
  std::vector<double> cuts{0.0};
  ellipse_hits(origin, dir, cfg.x0, cfg.y0, cfg.a_o, cfg.b_o, cuts);
  ellipse_hits(origin, dir, cfg.x0, cfg.y0, cfg.a_i, cfg.b_i, cuts);
  if (dir[1] != 0.0) {
    const double t = (cfg.y0 - origin[1]) / dir[1];
    if (t >= 0.0) cuts.push_back(t);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Past the last cut the ray is outside the outer ellipse for good.
  std::optional<std::pair<double, double>> run;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    if (b - a <= 0.0) continue;
    const double m = 0.5 * (a + b);
    const bool inside = in_horseshoe(cfg, origin[0] + m * dir[0], origin[1] + m * dir[1], 0.0);
    if (inside) {
      if (!run) run.emplace(a, b);
      else run->second = b;
    } else if (run) {
      break;
    }
  }
  return run;
}

std::vector<Ray> build_rays(const TrajectoryConfig& cfg) {
  cfg.validate();
  std::vector<Ray> rays;
  rays.reserve(cfg.rows * cfg.cols);
  for (std::size_t i = 0; i < cfg.rows; ++i) {
    const double z = row_height(cfg, i);
    for (std::size_t j = 0; j < cfg.cols; ++j) {
      const double phi = tangency_parameter(cfg, j);
      Ray r;
      r.row = i;
      r.col = j;
      r.origin = {cfg.x0 + cfg.a_t * std::cos(phi), cfg.y0 + cfg.b_t * std::sin(phi), z};
      const double tx = -cfg.a_t * std::sin(phi), ty = cfg.b_t * std::cos(phi);
      const double n = std::hypot(tx, ty);
      r.dir = {tx / n, ty / n, 0.0};
      if (auto iv = focal_interval(r.origin, r.dir, cfg)) {
        r.t_min = iv->first;
        r.t_max = iv->second;
        r.empty = false;
      }
      rays.push_back(r);
    }
  }
  return rays;
}

std::vector<Vec3> sample_points(const Ray& ray, std::size_t samples) {
  if (samples < 2) throw std::invalid_argument("sample_points needs at least 2 samples");
  if (ray.empty) throw std::invalid_argument("sample_points called on a ray with an empty focal interval");
  std::vector<Vec3> pts(samples);
  const double dt = (ray.t_max - ray.t_min) / static_cast<double>(samples - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = s + 1 == samples ? ray.t_max : ray.t_min + static_cast<double>(s) * dt;
    for (int a = 0; a < 3; ++a) pts[s][a] = ray.origin[a] + t * ray.dir[a];
  }
  return pts;
}

double SampleSet::mean_path_length() const {
  if (ray_dt.empty()) return 0.0;
  double acc = 0.0;
  for (double dt : ray_dt) acc += dt * static_cast<double>(samples - 1);
  return acc / static_cast<double>(ray_dt.size());
}

SampleSet build_samples(const TrajectoryConfig& cfg) {
  SampleSet set;
  set.rows = cfg.rows;
  set.cols = cfg.cols;
  set.samples = cfg.samples;
  for (const Ray& r : build_rays(cfg)) {
    if (r.empty) continue;
    set.ray_pixel.push_back(static_cast<std::uint32_t>(r.row * cfg.cols + r.col));
    set.ray_dt.push_back((r.t_max - r.t_min) / static_cast<double>(cfg.samples - 1));
    for (const Vec3& p : sample_points(r, cfg.samples)) set.points.insert(set.points.end(), p.begin(), p.end());
  }
  return set;
}

IntersectionReport validate_no_intersection(const std::vector<Ray>& rays) {
  IntersectionReport rep;
  for (std::size_t a = 0; a < rays.size(); ++a) {
    const Ray& r1 = rays[a];
    if (r1.empty) continue;
    for (std::size_t b = a + 1; b < rays.size(); ++b) {
      const Ray& r2 = rays[b];
      if (r2.empty || r2.row != r1.row) continue;
      ++rep.pairs_checked;
      const double cross = r1.dir[0] * r2.dir[1] - r1.dir[1] * r2.dir[0];
      const double wx = r2.origin[0] - r1.origin[0], wy = r2.origin[1] - r1.origin[1];
      bool hit = false;
      if (cross == 0.0) {
        // Parallel: only collinear rays with overlapping segments meet.
        if (wx * r1.dir[1] - wy * r1.dir[0] == 0.0) {
          const double proj = wx * r1.dir[0] + wy * r1.dir[1];
          const double sgn = r1.dir[0] * r2.dir[0] + r1.dir[1] * r2.dir[1];
          double lo = proj + sgn * r2.t_min, hi = proj + sgn * r2.t_max;
          if (lo > hi) std::swap(lo, hi);
          hit = lo <= r1.t_max && hi >= r1.t_min;
        }
      } else {
        const double t1 = (wx * r2.dir[1] - wy * r2.dir[0]) / cross;
        const double t2 = (wx * r1.dir[1] - wy * r1.dir[0]) / cross;
        hit = t1 >= r1.t_min && t1 <= r1.t_max && t2 >= r2.t_min && t2 <= r2.t_max;
      }
      if (hit && rep.pass) {
        rep.pass = false;
        rep.row = r1.row;
        rep.col_a = r1.col;
        rep.col_b = r2.col;
        std::ostringstream os;
        os << "rays (row " << r1.row << ", col " << r1.col << ") and (row " << r2.row << ", col " << r2.col
           << ") intersect inside their focal intervals";
        rep.message = os.str();
      }
    }
  }
  if (rep.pass) rep.message = "no intersections among " + std::to_string(rep.pairs_checked) + " same-row pairs";
  return rep;
}

IntersectionReport validate_no_intersection(const TrajectoryConfig& cfg) { return validate_no_intersection(build_rays(cfg)); }

}  // namespace nebla
