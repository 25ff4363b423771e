#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "densedet/geom.hpp"

namespace densedet {

struct Frame {
  PointCloud points;
  std::vector<OrientedBox> boxes;
};

/// Ordered frames; each track id appears in at most one box per frame.
struct TrackedSequence {
  std::vector<Frame> frames;
};

struct OutlierParams {
  double radius = 0.5;
  int min_neighbors = 2;
};

/// Canonical in-box points of one track, grouped by source frame.
struct FusedObject {
  TrackId track_id = 0;
  ObjectClass cls = ObjectClass::kVehicle;
  /// Box dims taken from the first frame that contains the track.
  Vec3 dims;
  std::vector<std::size_t> frame_indices;
  std::vector<PointCloud> per_frame;
  std::size_t points_before_filter = 0;
  std::size_t points_after_filter = 0;
};

/// Gathers in-box points per frame, canonicalizes them, then drops outliers
/// judged over the concatenation of all frames. Throws kUnknownTrack.
FusedObject fuse_object(const TrackedSequence& seq, TrackId track_id,
                        const OutlierParams& outliers = {});

/// Stable descending sort by list size; ties keep ascending index order.
std::vector<std::size_t> sort_frames_by_count(const std::vector<PointCloud>& per_frame);

struct FillStats {
  std::size_t voxels_filled = 0;
  std::size_t voxels_union = 0;
  std::size_t frames_used = 0;

  double ratio() const {
    return voxels_union == 0 ? 0.0
                             : static_cast<double>(voxels_filled) / static_cast<double>(voxels_union);
  }
};

struct FillParams {
  std::size_t voxel_capacity = 5;
  double stop_ratio = 0.95;
};

struct FillResult {
  PointCloud points;
  FillStats stats;
};

/// Voxel grid in the canonical frame of a box with the given dims.
VoxelSpec object_voxel_spec(const Vec3& dims, const Vec3& cell = {0.1, 0.1, 0.15});

/// Consumes frames in the given order into a capacity-capped voxel grid.
/// A voxel touched by an earlier frame accepts nothing from later frames;
/// consumption stops once filled / union exceeds `stop_ratio`.
/// Throws kEmptyInput when there is no frame.
FillResult fill_voxel_grid(const std::vector<PointCloud>& sorted_lists, const VoxelSpec& spec,
                           const FillParams& params = {});

struct SymmetryParams {
  std::size_t min_points = 10;
};

/// Mirrors the denser lateral half (y' > 0 vs y' < 0) of a vehicle across
/// y' = 0. Other classes, and vehicles below `min_points`, pass through.
PointCloud symmetrize_vehicle(const PointCloud& canonical_points, ObjectClass cls,
                              const SymmetryParams& params = {});

struct DenseObject {
  TrackId track_id = 0;
  ObjectClass cls = ObjectClass::kVehicle;
  Vec3 dims;
  PointCloud canonical_points;
  FillStats fill_stats;
};

using DenseObjectBank = std::map<TrackId, DenseObject>;

struct DenseGenParams {
  OutlierParams outliers;
  FillParams fill;
  SymmetryParams symmetry;
  Vec3 cell{0.1, 0.1, 0.15};
};

DenseObject generate_dense_object(const TrackedSequence& seq, TrackId track_id,
                                  const DenseGenParams& params = {});

std::vector<TrackId> track_ids(const TrackedSequence& seq);

/// Dense objects for every track, built on `workers` threads.
DenseObjectBank build_dense_bank(const TrackedSequence& seq, const DenseGenParams& params = {},
                                 int workers = 1);

struct DenseScene {
  PointCloud dense_cloud;
  PointCloud object_only_cloud;
  std::size_t source_frame_index = 0;
  std::size_t background_count = 0;
};

/// Replaces every box region of `frame` with the bank's dense points posed in
/// that box; boxes missing from the bank keep their raw in-box points.
DenseScene compose_dense_scene(const Frame& frame, const DenseObjectBank& bank,
                               std::size_t frame_index = 0);

// --- persistence -----------------------------------------------------------

void save_sequence(const TrackedSequence& seq, const std::string& dir);
TrackedSequence load_sequence(const std::string& dir);

/// One cloud file per track plus index.json (class, dims, fill stats).
void save_bank(const DenseObjectBank& bank, const std::string& dir);
DenseObjectBank load_bank(const std::string& dir);

}  // namespace densedet
