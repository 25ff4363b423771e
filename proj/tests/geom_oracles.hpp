// Brute-force geometry references shared by the unit tests and the
// acceptance binary. They use only the value types of the library.
#pragma once

#include <array>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "densedet/geom.hpp"

namespace oracle {

using densedet::OrientedBox;
using densedet::Point3;
using densedet::PointCloud;
using densedet::VoxelSpec;

/// Exact floor((coord - origin) / cell) over the binary values of the doubles.
inline std::int64_t rational_floor(double coord, double origin, double cell) {
  using boost::multiprecision::cpp_int;
  using boost::multiprecision::cpp_rational;
  const cpp_rational q = (cpp_rational(coord) - cpp_rational(origin)) / cpp_rational(cell);
  const cpp_int num = boost::multiprecision::numerator(q);
  const cpp_int den = boost::multiprecision::denominator(q);
  cpp_int f = num / den;  // truncates toward zero
  if (num < 0 && f * den != num) f -= 1;
  return static_cast<std::int64_t>(f);
}

/// Rotates the offset into the box frame and compares against the half extents.
inline bool in_box(const Point3& p, const OrientedBox& b) {
  const double dx = p.x - b.center.x, dy = p.y - b.center.y;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return std::abs(u) <= b.dims.x / 2 && std::abs(v) <= b.dims.y / 2 &&
         std::abs(p.z - b.center.z) <= b.dims.z / 2;
}

/// All-pairs neighbor count; a point survives with at least k others within r.
inline std::vector<bool> radius_inliers(const PointCloud& pts, double r, int k) {
  std::vector<bool> keep(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    int n = 0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y, dz = pts[i].z - pts[j].z;
      if (dx * dx + dy * dy + dz * dz <= r * r) ++n;
    }
    keep[i] = n >= k;
  }
  return keep;
}

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  PointCloud out(n);
  for (auto& p : out) p = {d(rng), d(rng), d(rng), 0.5};
  return out;
}

struct VoxelSum {
  int n = 0;
  std::array<double, 3> sum{};
};

/// Points accumulated per coarse voxel, keyed by (ix, iy, iz) of the base
/// grid cell divided by `factor`. Points outside the base grid are ignored.
inline std::map<std::array<std::int64_t, 3>, VoxelSum> accumulate(const PointCloud& pts,
                                                                  const VoxelSpec& base,
                                                                  std::int64_t factor) {
  std::map<std::array<std::int64_t, 3>, VoxelSum> m;
  for (const auto& p : pts) {
    const std::array<double, 3> c{p.x, p.y, p.z};
    const std::array<double, 3> o{base.origin.x, base.origin.y, base.origin.z};
    const std::array<double, 3> s{base.cell.x, base.cell.y, base.cell.z};
    std::array<std::int64_t, 3> key{};
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const auto i = rational_floor(c[a], o[a], s[a]);
      inside = inside && i >= 0 && i < base.shape[a];
      key[a] = i / factor;
    }
    if (!inside) continue;
    auto& acc = m[key];
    ++acc.n;
    for (int a = 0; a < 3; ++a) acc.sum[a] += c[a];
  }
  return m;
}

}  // namespace oracle
