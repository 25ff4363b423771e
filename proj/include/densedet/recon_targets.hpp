#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densedet/geom.hpp"

namespace densedet {

/// Occupancy supervision at one coarsening factor of the detector grid.
struct ScaleTarget {
  std::int64_t factor = 1;
  VoxelSpec spec;
  /// y_j, one byte per voxel in VoxelSpec::linear order.
  std::vector<std::uint8_t> mask;
  /// Mean member point minus voxel center (meters), 3 values per voxel,
  /// zero where the mask is zero.
  std::vector<double> offsets;
  /// Mean member point, 3 values per voxel, zero where the mask is zero.
  std::vector<double> means;
  std::int64_t n_foreground = 0;
  std::int64_t n_background = 0;

  Vec3 voxel_center(std::int64_t linear) const { return spec.center(spec.unlinear(linear)); }
};

struct OccupancyTarget {
  std::vector<ScaleTarget> scales;
};

inline const std::vector<std::int64_t> kDefaultTargetFactors{4, 2};

/// Per-scale masks, centers and member means of `object_cloud` on grids
/// `factor` times coarser than `base_spec`.
OccupancyTarget build_targets(const PointCloud& object_cloud, const VoxelSpec& base_spec,
                              const std::vector<std::int64_t>& factors = kDefaultTargetFactors);

/// Writes `<stem>_targets.json` plus one `<stem>_s<factor>.bin` per scale:
/// u8 mask followed by 3 x f32 offsets per voxel.
void save_targets(const OccupancyTarget& target, const std::string& stem);

}  // namespace densedet
