#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "densedet/dense_gen.hpp"
#include "densedet/geom.hpp"

namespace densedet {

struct SceneConfig {
  std::uint64_t seed = 0;
  std::size_t n_frames = 30;
  /// Objects per class, indexed by ObjectClass.
  std::array<std::size_t, kNumClasses> n_objects{6, 3, 3};
  /// Object centers and clutter stay within [-extent, extent] in x and y.
  double extent = 12.0;
  /// Minimum horizontal distance from the sensor to any box footprint.
  double min_range = 2.0;
  Vec3 sensor{0.0, 0.0, 1.8};
  /// Expected points on a 1 m^2 face squarely facing the sensor at 1 m.
  double density = 900.0;
  /// Independent per-point drop probability.
  double dropout = 0.1;
  /// Ground returns per m^2, uniform, outside every box.
  double clutter_density = 0.5;
  /// Translation per frame, meters, drawn uniformly from [0, max_speed].
  double max_speed = 0.15;
  /// Yaw change per frame, radians, magnitude uniform in this range with a random sign.
  double min_yaw_rate = 0.03;
  double max_yaw_rate = 0.08;
};

/// Throws kInvalidConfig on impossible settings.
void validate(const SceneConfig& cfg);

/// Nominal (l, w, h) of a class.
Vec3 class_dims(ObjectClass cls);

/// Expected surviving point count of `box` seen from `sensor`: every face
/// whose outward normal n has c = n . u > 0, where u is the unit direction
/// from the box center to the sensor, contributes density * area * c / r^2
/// with r the center-to-sensor distance; dropout scales the total.
double expected_object_points(const OrientedBox& box, const Vec3& sensor, double density,
                              double dropout);

/// Poisson draw per visible face, uniform positions on the face (inset so
/// every point is strictly inside the box), then per-point dropout.
PointCloud sample_object_points(const OrientedBox& box, const Vec3& sensor, double density,
                                double dropout, std::mt19937_64& rng);

/// Tracked objects moving and rotating smoothly over `n_frames`, sampled as
/// face-visibility point sets plus ground clutter. Bit-exact for a seed.
TrackedSequence generate_sequence(const SceneConfig& cfg);

}  // namespace densedet
