#include "densedet/synth_lidar.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "densedet/error.hpp"

namespace densedet {

namespace {

constexpr double kPi = std::numbers::pi;
// Face samples sit this fraction of the half-extent from the center, so
// rounding in the pose transform cannot push them outside the box.
constexpr double kInset = 0.999;
constexpr double kGroundThickness = 0.05;
constexpr double kSeparation = 0.3;
constexpr int kPlacementTries = 2000;

struct Track {
  OrientedBox box0;
  Vec3 velocity;
  double yaw_rate = 0.0;

  OrientedBox at(std::size_t t) const {
    OrientedBox b = box0;
    const double s = static_cast<double>(t);
    b.center.x += velocity.x * s;
    b.center.y += velocity.y * s;
    b.yaw = normalize_yaw(box0.yaw + yaw_rate * s);
    return b;
  }
};

double half_diagonal(const Vec3& dims) { return 0.5 * std::hypot(dims.x, dims.y); }

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

struct Face {
  int axis;     // 0 = x, 1 = y, 2 = z in the box frame
  double sign;  // outward direction along the axis
};

constexpr Face kFaces[6] = {{0, 1}, {0, -1}, {1, 1}, {1, -1}, {2, 1}, {2, -1}};

// Outward normal in world coordinates.
Vec3 face_normal(const Face& f, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  switch (f.axis) {
    case 0: return {f.sign * c, f.sign * s, 0.0};
    case 1: return {-f.sign * s, f.sign * c, 0.0};
    default: return {0.0, 0.0, f.sign};
  }
}

double face_area(const Face& f, const Vec3& d) {
  switch (f.axis) {
    case 0: return d.y * d.z;
    case 1: return d.x * d.z;
    default: return d.x * d.y;
  }
}

// Per-face expected counts before dropout.
std::array<double, 6> face_rates(const OrientedBox& box, const Vec3& sensor, double density) {
  const Vec3 to{sensor.x - box.center.x, sensor.y - box.center.y, sensor.z - box.center.z};
  const double r2 = to.x * to.x + to.y * to.y + to.z * to.z;
  std::array<double, 6> rates{};
  if (!(r2 > 0.0)) return rates;
  const double r = std::sqrt(r2);
  for (std::size_t i = 0; i < 6; ++i) {
    const Vec3 n = face_normal(kFaces[i], box.yaw);
    const double cos_theta = (n.x * to.x + n.y * to.y + n.z * to.z) / r;
    if (cos_theta > 0.0) rates[i] = density * face_area(kFaces[i], box.dims) * cos_theta / r2;
  }
  return rates;
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kInvalidConfig, "scene config: " + what);
}

bool finite(const Vec3& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

}  // namespace

void validate(const SceneConfig& cfg) {
  require(cfg.n_frames > 0, "n_frames must be positive");
  require(std::isfinite(cfg.extent) && cfg.extent > 0.0, "extent must be positive");
  require(std::isfinite(cfg.min_range) && cfg.min_range >= 0.0, "min_range must be >= 0");
  require(finite(cfg.sensor), "sensor must be finite");
  require(std::isfinite(cfg.density) && cfg.density >= 0.0, "density must be >= 0");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, "dropout must lie in [0, 1)");
  require(std::isfinite(cfg.clutter_density) && cfg.clutter_density >= 0.0,
          "clutter_density must be >= 0");
  require(std::isfinite(cfg.max_speed) && cfg.max_speed >= 0.0, "max_speed must be >= 0");
  require(std::isfinite(cfg.max_yaw_rate) && cfg.min_yaw_rate >= 0.0 &&
              cfg.min_yaw_rate <= cfg.max_yaw_rate,
          "yaw rates must satisfy 0 <= min_yaw_rate <= max_yaw_rate");
}

Vec3 class_dims(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kVehicle: return {4.5, 1.9, 1.7};
    case ObjectClass::kPedestrian: return {0.8, 0.8, 1.8};
    case ObjectClass::kCyclist: return {1.8, 0.8, 1.8};
  }
  return {1.0, 1.0, 1.0};
}

double expected_object_points(const OrientedBox& box, const Vec3& sensor, double density,
                              double dropout) {
  double total = 0.0;
  for (double r : face_rates(box, sensor, density)) total += r;
  return total * (1.0 - dropout);
}

PointCloud sample_object_points(const OrientedBox& box, const Vec3& sensor, double density,
                                double dropout, std::mt19937_64& rng) {
  const auto rates = face_rates(box, sensor, density);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> reflect(0.4, 0.9);
  const double half[3] = {0.5 * box.dims.x * kInset, 0.5 * box.dims.y * kInset,
                          0.5 * box.dims.z * kInset};
  PointCloud out;
  for (std::size_t i = 0; i < 6; ++i) {
    if (rates[i] <= 0.0) continue;
    std::poisson_distribution<long> count(rates[i]);
    const long n = count(rng);
    for (long k = 0; k < n; ++k) {
      double local[3];
      for (int a = 0; a < 3; ++a) local[a] = half[a] * unit(rng);
      local[kFaces[i].axis] = kFaces[i].sign * half[kFaces[i].axis];
      const double feat = reflect(rng);
      if (u01(rng) < dropout) continue;
      out.push_back(from_canonical({local[0], local[1], local[2], feat}, box));
    }
  }
  return out;
}

TrackedSequence generate_sequence(const SceneConfig& cfg) {
  validate(cfg);
  auto rng = stream(cfg.seed, 0x7a5c, 0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  std::vector<Track> tracks;
  TrackId next_id = 1;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cls = static_cast<ObjectClass>(c);
    for (std::size_t i = 0; i < cfg.n_objects[static_cast<std::size_t>(c)]; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
        Track tr;
        const Vec3 nominal = class_dims(cls);
        tr.box0.dims = {nominal.x * uniform(0.9, 1.1), nominal.y * uniform(0.9, 1.1),
                        nominal.z * uniform(0.9, 1.1)};
        tr.box0.center = {uniform(-cfg.extent, cfg.extent), uniform(-cfg.extent, cfg.extent),
                          0.5 * tr.box0.dims.z};
        tr.box0.yaw = uniform(-kPi, kPi);
        tr.box0.cls = cls;
        const double heading = uniform(-kPi, kPi);
        const double speed = uniform(0.0, cfg.max_speed);
        tr.velocity = {speed * std::cos(heading), speed * std::sin(heading), 0.0};
        const double rate = uniform(cfg.min_yaw_rate, cfg.max_yaw_rate);
        tr.yaw_rate = u01(rng) < 0.5 ? -rate : rate;

        const double hd = half_diagonal(tr.box0.dims);
        bool ok = true;
        for (std::size_t t = 0; t < cfg.n_frames && ok; ++t) {
          const Vec3 p = tr.at(t).center;
          ok = std::abs(p.x) + hd <= cfg.extent && std::abs(p.y) + hd <= cfg.extent &&
               std::hypot(p.x - cfg.sensor.x, p.y - cfg.sensor.y) >= cfg.min_range + hd;
          for (const auto& other : tracks) {
            if (!ok) break;
            const Vec3 q = other.at(t).center;
            ok = std::hypot(p.x - q.x, p.y - q.y) >=
                 hd + half_diagonal(other.box0.dims) + kSeparation;
          }
        }
        if (ok) {
          tr.box0.track_id = next_id++;
          tracks.push_back(tr);
          placed = true;
        }
      }
      if (!placed) {
        fail(ErrorCode::kInvalidConfig, "scene config: could not place " +
                                            std::string(to_string(cls)) +
                                            " without overlap; reduce n_objects or grow extent");
      }
    }
  }

  TrackedSequence seq;
  seq.frames.resize(cfg.n_frames);
  const double area = 4.0 * cfg.extent * cfg.extent;
  for (std::size_t t = 0; t < cfg.n_frames; ++t) {
    auto frng = stream(cfg.seed, 0xf4a3, t);
    Frame& frame = seq.frames[t];
    for (const auto& tr : tracks) frame.boxes.push_back(tr.at(t));
    for (const auto& box : frame.boxes) {
      const auto pts = sample_object_points(box, cfg.sensor, cfg.density, cfg.dropout, frng);
      frame.points.insert(frame.points.end(), pts.begin(), pts.end());
    }
    std::poisson_distribution<long> clutter(cfg.clutter_density * area);
    std::uniform_real_distribution<double> xy(-cfg.extent, cfg.extent);
    std::uniform_real_distribution<double> z(0.0, kGroundThickness);
    std::uniform_real_distribution<double> feat(0.0, 0.2);
    const long n = clutter(frng);
    for (long k = 0; k < n; ++k) {
      const Point3 p{xy(frng), xy(frng), z(frng), feat(frng)};
      bool inside = false;
      for (const auto& box : frame.boxes) inside = inside || in_box(p, box);
      if (!inside) frame.points.push_back(p);
    }
  }
  return seq;
}

}  // namespace densedet
