#include "densedet/geom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "densedet/error.hpp"

namespace densedet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kUnknownTrack: return "unknown_track";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kNanLoss: return "nan_loss";
    case ErrorCode::kNonFinite: return "non_finite";
  }
  return "unknown";
}

ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsage:
    case ErrorCode::kInvalidConfig:
      return ErrorClass::kUsage;
    case ErrorCode::kNanLoss:
    case ErrorCode::kNonFinite:
      return ErrorClass::kNumeric;
    default:
      return ErrorClass::kData;
  }
}

std::string_view to_string(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kVehicle: return "vehicle";
    case ObjectClass::kPedestrian: return "pedestrian";
    case ObjectClass::kCyclist: return "cyclist";
  }
  return "vehicle";
}

ObjectClass object_class_from_string(std::string_view name) {
  if (name == "vehicle") return ObjectClass::kVehicle;
  if (name == "pedestrian") return ObjectClass::kPedestrian;
  if (name == "cyclist") return ObjectClass::kCyclist;
  fail(ErrorCode::kIo, "unknown object class '" + std::string(name) + "'");
}

double normalize_yaw(double yaw) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(yaw + std::numbers::pi, kTwoPi);
  if (wrapped < 0.0) wrapped += kTwoPi;
  wrapped -= std::numbers::pi;
  // fmod can land exactly on +pi after the shift back.
  if (wrapped >= std::numbers::pi) wrapped -= kTwoPi;
  return wrapped;
}

void validate(const OrientedBox& box) {
  const auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!ok(box.dims.x) || !ok(box.dims.y) || !ok(box.dims.z)) {
    fail(ErrorCode::kInvalidConfig, "box dims must be strictly positive");
  }
  if (!std::isfinite(box.center.x) || !std::isfinite(box.center.y) ||
      !std::isfinite(box.center.z) || !std::isfinite(box.yaw)) {
    fail(ErrorCode::kInvalidConfig, "box pose must be finite");
  }
}

void validate(const VoxelSpec& spec) {
  const auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!ok(spec.cell.x) || !ok(spec.cell.y) || !ok(spec.cell.z)) {
    fail(ErrorCode::kInvalidConfig, "voxel cell must be strictly positive");
  }
  for (auto n : spec.shape) {
    if (n <= 0) fail(ErrorCode::kInvalidConfig, "voxel shape must be strictly positive");
  }
}

VoxelIndex VoxelSpec::unlinear(std::int64_t offset) const {
  VoxelIndex v;
  v.ix = offset % shape[0];
  offset /= shape[0];
  v.iy = offset % shape[1];
  v.iz = offset / shape[1];
  return v;
}

Vec3 VoxelSpec::center(const VoxelIndex& v) const {
  return {origin.x + (static_cast<double>(v.ix) + 0.5) * cell.x,
          origin.y + (static_cast<double>(v.iy) + 0.5) * cell.y,
          origin.z + (static_cast<double>(v.iz) + 0.5) * cell.z};
}

VoxelSpec VoxelSpec::coarsened(std::int64_t factor) const {
  VoxelSpec out = *this;
  const auto f = static_cast<double>(factor);
  out.cell = {cell.x * f, cell.y * f, cell.z * f};
  for (auto& n : out.shape) n = (n + factor - 1) / factor;
  return out;
}

namespace {

// Error-free transformations (Knuth TwoSum, FMA TwoProduct).
inline void two_sum(double a, double b, double& s, double& err) {
  s = a + b;
  const double bb = s - a;
  err = (a - (s - bb)) + (b - bb);
}

// Sign of the exact sum of `terms`, via a nonoverlapping expansion.
int exact_sign(std::span<const double> terms) {
  std::vector<double> expansion;
  expansion.reserve(terms.size() + 1);
  for (double b : terms) {
    double q = b;
    for (double& e : expansion) {
      double s = 0.0, h = 0.0;
      two_sum(q, e, s, h);
      e = h;
      q = s;
    }
    expansion.push_back(q);
  }
  for (auto it = expansion.rbegin(); it != expansion.rend(); ++it) {
    if (*it > 0.0) return 1;
    if (*it < 0.0) return -1;
  }
  return 0;
}

// sign(coord - origin - k * cell), exactly.
int residual_sign(double coord, double origin, double cell, double k) {
  const double p = k * cell;
  const double pe = std::fma(k, cell, -p);
  const std::array<double, 4> terms{coord, -origin, -p, -pe};
  return exact_sign(terms);
}

}  // namespace

std::int64_t exact_floor_div(double coord, double origin, double cell) {
  const double q = std::floor((coord - origin) / cell);
  if (!std::isfinite(q) || std::abs(q) > 0x1p52) {
    return static_cast<std::int64_t>(q);
  }
  double k = q;
  while (residual_sign(coord, origin, cell, k) < 0) k -= 1.0;
  while (residual_sign(coord, origin, cell, k + 1.0) >= 0) k += 1.0;
  return static_cast<std::int64_t>(k);
}

std::optional<VoxelIndex> voxel_index(const Point3& point, const VoxelSpec& spec) {
  const std::array<double, 3> coord{point.x, point.y, point.z};
  const std::array<double, 3> origin{spec.origin.x, spec.origin.y, spec.origin.z};
  const std::array<double, 3> cell{spec.cell.x, spec.cell.y, spec.cell.z};
  std::array<std::int64_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(coord[a])) return std::nullopt;
    // Cheap reject before the exact path; keeps huge quotients out of int64.
    const double q = (coord[a] - origin[a]) / cell[a];
    if (q < -1.0 || q > static_cast<double>(spec.shape[a]) + 1.0) return std::nullopt;
    idx[a] = exact_floor_div(coord[a], origin[a], cell[a]);
    if (idx[a] < 0 || idx[a] >= spec.shape[a]) return std::nullopt;
  }
  return VoxelIndex{idx[0], idx[1], idx[2]};
}

Point3 to_canonical(const Point3& point, const OrientedBox& box) {
  const double dx = point.x - box.center.x;
  const double dy = point.y - box.center.y;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  return {c * dx + s * dy, -s * dx + c * dy, point.z - box.center.z, point.feat};
}

Point3 from_canonical(const Point3& point, const OrientedBox& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  return {c * point.x - s * point.y + box.center.x, s * point.x + c * point.y + box.center.y,
          point.z + box.center.z, point.feat};
}

bool in_box(const Point3& point, const OrientedBox& box) {
  const Point3 local = to_canonical(point, box);
  return std::abs(local.x) <= 0.5 * box.dims.x && std::abs(local.y) <= 0.5 * box.dims.y &&
         std::abs(local.z) <= 0.5 * box.dims.z;
}

PointCloud points_in_box(std::span<const Point3> points, const OrientedBox& box) {
  PointCloud out;
  for (const auto& p : points) {
    if (in_box(p, box)) out.push_back(p);
  }
  return out;
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

std::vector<bool> radius_inlier_mask(std::span<const Point3> points, double radius,
                                     int min_neighbors) {
  if (!(radius > 0.0) || min_neighbors < 1) {
    fail(ErrorCode::kInvalidConfig, "radius_outlier_removal needs radius > 0, min_neighbors >= 1");
  }
  // Hash cells are a little wider than the radius so that any neighbor within
  // the radius is at most one cell away despite rounding in the key.
  const double cell = radius * 1.01;
  const double r2 = radius * radius;
  const auto key_of = [cell](const Point3& p) {
    return CellKey{static_cast<std::int64_t>(std::floor(p.x / cell)),
                   static_cast<std::int64_t>(std::floor(p.y / cell)),
                   static_cast<std::int64_t>(std::floor(p.z / cell))};
  };
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> grid;
  grid.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) grid[key_of(points[i])].push_back(i);

  std::vector<bool> keep(points.size(), false);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const CellKey k = key_of(p);
    int found = 0;
    for (std::int64_t dz = -1; dz <= 1 && found < min_neighbors; ++dz) {
      for (std::int64_t dy = -1; dy <= 1 && found < min_neighbors; ++dy) {
        for (std::int64_t dx = -1; dx <= 1 && found < min_neighbors; ++dx) {
          const auto it = grid.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == grid.end()) continue;
          for (std::size_t j : it->second) {
            if (j == i) continue;
            const double ex = points[j].x - p.x;
            const double ey = points[j].y - p.y;
            const double ez = points[j].z - p.z;
            if (ex * ex + ey * ey + ez * ez <= r2 && ++found >= min_neighbors) break;
          }
        }
      }
    }
    keep[i] = found >= min_neighbors;
  }
  return keep;
}

PointCloud radius_outlier_removal(std::span<const Point3> points, double radius,
                                  int min_neighbors) {
  const auto keep = radius_inlier_mask(points, radius, min_neighbors);
  PointCloud out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (keep[i]) out.push_back(points[i]);
  }
  return out;
}

PointCloud flip_about_axial_plane(std::span<const Point3> points, FlipAxis axis) {
  PointCloud out(points.begin(), points.end());
  for (auto& p : out) {
    if (axis == FlipAxis::kX) {
      p.y = -p.y;
    } else {
      p.x = -p.x;
    }
  }
  return out;
}

std::array<std::array<double, 2>, 4> bev_corners(const OrientedBox& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = 0.5 * box.dims.x;
  const double hw = 0.5 * box.dims.y;
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {c * local[i][0] - s * local[i][1] + box.center.x,
              s * local[i][0] + c * local[i][1] + box.center.y};
  }
  return out;
}

namespace {

using Poly = std::vector<std::array<double, 2>>;

double polygon_area(const Poly& poly) {
  double area = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    area += a[0] * b[1] - a[1] * b[0];
  }
  return 0.5 * std::abs(area);
}

// Sutherland-Hodgman clip of `subject` by the convex CCW polygon `clip`.
Poly clip_convex(Poly subject, const Poly& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const auto& a = clip[e];
    const auto& b = clip[(e + 1) % clip.size()];
    const auto side = [&](const std::array<double, 2>& p) {
      return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    };
    Poly out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const auto& cur = subject[i];
      const auto& prev = subject[(i + subject.size() - 1) % subject.size()];
      const double sc = side(cur);
      const double sp = side(prev);
      if (sc >= 0.0) {
        if (sp < 0.0) {
          const double t = sp / (sp - sc);
          out.push_back({prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])});
        }
        out.push_back(cur);
      } else if (sp >= 0.0) {
        const double t = sp / (sp - sc);
        out.push_back({prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

}  // namespace

double bev_iou(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const Poly pa(ca.begin(), ca.end());
  const Poly pb(cb.begin(), cb.end());
  const double inter = polygon_area(clip_convex(pa, pb));
  const double uni = a.dims.x * a.dims.y + b.dims.x * b.dims.y - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// --- serialization ---------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "cloud serialization assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* raw = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) fail(ErrorCode::kIo, "truncated cloud buffer");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_cloud(std::span<const Point3> points) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + points.size() * 16);
  out.insert(out.end(), kCloudMagic.begin(), kCloudMagic.end());
  put<std::uint32_t>(out, kCloudVersion);
  put<std::uint64_t>(out, points.size());
  for (const auto& p : points) {
    put<float>(out, static_cast<float>(p.x));
    put<float>(out, static_cast<float>(p.y));
    put<float>(out, static_cast<float>(p.z));
    put<float>(out, static_cast<float>(p.feat));
  }
  return out;
}

PointCloud decode_cloud(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(kCloudMagic.begin(), kCloudMagic.end(), bytes.begin())) {
    fail(ErrorCode::kIo, "not a point cloud file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCloudVersion) {
    fail(ErrorCode::kIo, "unsupported cloud version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(bytes, pos);
  if (count > (bytes.size() - pos) / 16) fail(ErrorCode::kIo, "truncated cloud buffer");
  PointCloud out(count);
  for (auto& p : out) {
    p.x = get<float>(bytes, pos);
    p.y = get<float>(bytes, pos);
    p.z = get<float>(bytes, pos);
    p.feat = get<float>(bytes, pos);
  }
  return out;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
}

void write_cloud(const std::string& path, std::span<const Point3> points) {
  write_bytes(path, encode_cloud(points));
}

PointCloud read_cloud(const std::string& path) { return decode_cloud(read_bytes(path)); }

void write_ply(const std::string& path, std::span<const Point3> points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty float feat\n"
         "end_header\n";
  for (const auto& p : points) {
    out << p.x << ' ' << p.y << ' ' << p.z << ' ' << p.feat << '\n';
  }
}

std::string boxes_to_json(std::span<const OrientedBox> boxes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : boxes) {
    arr.push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                   {"dims", {b.dims.x, b.dims.y, b.dims.z}},
                   {"yaw", b.yaw},
                   {"class", std::string(to_string(b.cls))},
                   {"track_id", b.track_id}});
  }
  return arr.dump(2);
}

std::vector<OrientedBox> boxes_from_json(std::string_view text) {
  std::vector<OrientedBox> out;
  try {
    const auto arr = nlohmann::json::parse(text);
    for (const auto& j : arr) {
      OrientedBox b;
      const auto& c = j.at("center");
      const auto& d = j.at("dims");
      b.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      b.dims = {d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>()};
      b.yaw = j.at("yaw").get<double>();
      b.cls = object_class_from_string(j.at("class").get<std::string>());
      b.track_id = j.at("track_id").get<TrackId>();
      out.push_back(b);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed box json: ") + e.what());
  }
  return out;
}

}  // namespace densedet
