#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace densedet {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  // Reflectance-like scalar in [0, 1].
  double feat = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

using PointCloud = std::vector<Point3>;

enum class ObjectClass : std::uint8_t { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };

inline constexpr int kNumClasses = 3;

std::string_view to_string(ObjectClass cls);
ObjectClass object_class_from_string(std::string_view name);

using TrackId = std::uint64_t;

/// 7-DoF box: bottom-to-top extent is centered on `center.z`.
struct OrientedBox {
  Vec3 center;
  Vec3 dims{1.0, 1.0, 1.0};  // (l, w, h)
  double yaw = 0.0;
  ObjectClass cls = ObjectClass::kVehicle;
  TrackId track_id = 0;

  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

/// Wraps an angle into [-pi, pi).
double normalize_yaw(double yaw);

/// Throws kInvalidConfig unless dims are strictly positive and finite.
void validate(const OrientedBox& box);

struct VoxelIndex {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  std::int64_t iz = 0;

  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

struct VoxelSpec {
  Vec3 origin{-75.2, -75.2, -2.0};
  Vec3 cell{0.1, 0.1, 0.15};
  std::array<std::int64_t, 3> shape{1504, 1504, 40};

  std::int64_t volume() const { return shape[0] * shape[1] * shape[2]; }
  /// Row-major offset with x fastest: (iz * ny + iy) * nx + ix.
  std::int64_t linear(const VoxelIndex& v) const {
    return (v.iz * shape[1] + v.iy) * shape[0] + v.ix;
  }
  VoxelIndex unlinear(std::int64_t offset) const;
  Vec3 center(const VoxelIndex& v) const;
  /// Same extent, cells `factor` times larger per axis (shape rounded up).
  VoxelSpec coarsened(std::int64_t factor) const;
};

void validate(const VoxelSpec& spec);

/// Cell for `point` with half-open [lower, upper) cells, or nullopt when the
/// point falls outside the grid. Exact for all finite inputs: the floor is
/// decided on the exact rational value of (coord - origin) / cell.
std::optional<VoxelIndex> voxel_index(const Point3& point, const VoxelSpec& spec);

/// Exact floor((coord - origin) / cell) over the binary values of the inputs.
std::int64_t exact_floor_div(double coord, double origin, double cell);

/// Box-frame coordinates: translate by -center, rotate by -yaw about z.
Point3 to_canonical(const Point3& point, const OrientedBox& box);
/// Inverse of to_canonical.
Point3 from_canonical(const Point3& point, const OrientedBox& box);

bool in_box(const Point3& point, const OrientedBox& box);
PointCloud points_in_box(std::span<const Point3> points, const OrientedBox& box);

/// Keeps points with at least `min_neighbors` other points within `radius`
/// (inclusive). Order-preserving; hash-grid accelerated.
PointCloud radius_outlier_removal(std::span<const Point3> points, double radius,
                                  int min_neighbors);
/// Same rule, returning the survivor mask instead of the points.
std::vector<bool> radius_inlier_mask(std::span<const Point3> points, double radius,
                                     int min_neighbors);

enum class FlipAxis { kX, kY };

/// Mirror across the axial plane containing `axis` (kX negates y, kY negates x).
PointCloud flip_about_axial_plane(std::span<const Point3> points, FlipAxis axis);

/// BEV footprint corners (counter-clockwise) of a box.
std::array<std::array<double, 2>, 4> bev_corners(const OrientedBox& box);

/// Rotated BEV intersection-over-union.
double bev_iou(const OrientedBox& a, const OrientedBox& b);

// --- serialization ---------------------------------------------------------

inline constexpr std::array<char, 4> kCloudMagic{'S', '2', 'D', 'C'};
inline constexpr std::uint32_t kCloudVersion = 1;

/// Little-endian: magic, u32 version, u64 count, then 4 x f32 per point.
std::vector<std::uint8_t> encode_cloud(std::span<const Point3> points);
PointCloud decode_cloud(std::span<const std::uint8_t> bytes);
void write_cloud(const std::string& path, std::span<const Point3> points);
PointCloud read_cloud(const std::string& path);

/// ASCII PLY with x y z feat vertex properties.
void write_ply(const std::string& path, std::span<const Point3> points);

std::string boxes_to_json(std::span<const OrientedBox> boxes);
std::vector<OrientedBox> boxes_from_json(std::string_view text);

std::vector<std::uint8_t> read_bytes(const std::string& path);
void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::string& path);
void write_text(const std::string& path, std::string_view text);

}  // namespace densedet
