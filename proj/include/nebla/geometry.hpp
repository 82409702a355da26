// SPDX-License-Identifier: Apache-2.0
//
// Tangent-ray geometry for the panoramic sweep.
//
// Coordinates are voxel units in the frame x = volume W axis, y = volume D
// axis, z = volume H axis (vertical). Voxel centers sit on integer
// coordinates. The horseshoe is the region between the inner and outer
// ellipses (sharing one center) on the side y >= y0, extruded along z. Each
// detector column j is a tangent point on the trajectory ellipse at parameter
// phi_j; each detector row i is a height z_i. Rays are horizontal and leave
// the tangent point in the direction of increasing phi; sampling covers the
// first stretch of that half-ray that lies in the horseshoe.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nebla {

using Vec3 = std::array<double, 3>;

struct TrajectoryConfig {
  double x0 = 31.5, y0 = 12.0;     // shared center
  double a_t = 14.0, b_t = 24.0;   // trajectory semi-axes
  double a_i = 18.0, b_i = 30.0;   // inner horseshoe boundary
  double a_o = 28.0, b_o = 44.0;   // outer horseshoe boundary
  double sweep = 3.14159265358979323846;
  double sweep_start = -0.9;       // phi of column 0
  std::size_t rows = 32, cols = 64;
  double z_min = 0.0, z_max = 31.0;
  std::size_t samples = 96;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

// Point-in-horseshoe test in the xy plane; `tol` widens the region.
bool in_horseshoe(const TrajectoryConfig& cfg, double x, double y, double tol = 1e-6);

struct Ray {
  Vec3 origin{};
  Vec3 dir{};
  double t_min = 0.0, t_max = 0.0;
  bool empty = true;
  std::size_t row = 0, col = 0;
};

double tangency_parameter(const TrajectoryConfig& cfg, std::size_t col);
double row_height(const TrajectoryConfig& cfg, std::size_t row);

// Rays in row-major pixel order (index row * cols + col), focal intervals filled.
std::vector<Ray> build_rays(const TrajectoryConfig& cfg);

// Focal interval of a horizontal ray: the first maximal stretch of t >= 0 inside
// the horseshoe. Empty when the half-ray never enters it.
std::optional<std::pair<double, double>> focal_interval(const Vec3& origin, const Vec3& dir,
                                                        const TrajectoryConfig& cfg);

// t_s = t_min + s (t_max - t_min) / (S - 1) for s = 0..S-1.
std::vector<Vec3> sample_points(const Ray& ray, std::size_t samples);

// Samples of all non-empty rays, stored ray-major.
struct SampleSet {
  std::size_t rows = 0, cols = 0, samples = 0;
  std::vector<std::uint32_t> ray_pixel;  // pixel index (row * cols + col) per non-empty ray
  std::vector<double> ray_dt;            // spacing per non-empty ray
  std::vector<double> points;            // [ray_pixel.size() * samples * 3], (x, y, z)

  std::size_t ray_count() const { return ray_pixel.size(); }
  std::size_t point_count() const { return ray_pixel.size() * samples; }
  double mean_path_length() const;
};

SampleSet build_samples(const TrajectoryConfig& cfg);

struct IntersectionReport {
  bool pass = true;
  std::size_t pairs_checked = 0;
  std::size_t row = 0, col_a = 0, col_b = 0;  // offending pair when !pass
  std::string message;
};

// Brute-force check over every same-row pair that the focal segments do not meet.
IntersectionReport validate_no_intersection(const std::vector<Ray>& rays);
IntersectionReport validate_no_intersection(const TrajectoryConfig& cfg);

// Fraction of samples saved against a reference sample count.
inline double sample_reduction(std::size_t samples, std::size_t reference) {
  return static_cast<double>(reference - samples) / static_cast<double>(reference);
}

}  // namespace nebla
