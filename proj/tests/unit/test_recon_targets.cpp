#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "densedet/error.hpp"
#include "densedet/geom.hpp"
#include "densedet/recon_targets.hpp"
#include "geom_oracles.hpp"

using namespace densedet;

namespace {

const VoxelSpec kBase{{-0.4, -0.4, -0.6}, {0.1, 0.1, 0.15}, {8, 8, 8}};

}  // namespace

TEST_CASE("a point at a voxel center has zero offset") {
  const auto spec = kBase.coarsened(2);
  const Vec3 c = spec.center({1, 2, 3});
  const auto t = build_targets({{c.x, c.y, c.z}}, kBase, {2});
  REQUIRE(t.scales.size() == 1);
  const auto& s = t.scales[0];
  const auto j = spec.linear({1, 2, 3});
  CHECK(s.mask[j] == 1);
  CHECK(s.n_foreground == 1);
  for (int a = 0; a < 3; ++a) CHECK(std::abs(s.offsets[3 * j + a]) < 1e-15);
  CHECK(s.means[3 * j] == c.x);
}

TEST_CASE("an empty cloud gives an all-zero mask") {
  const auto t = build_targets({}, kBase);
  REQUIRE(t.scales.size() == 2);
  for (const auto& s : t.scales) {
    CHECK(s.n_foreground == 0);
    CHECK(s.n_background == s.spec.volume());
    CHECK(std::all_of(s.mask.begin(), s.mask.end(), [](auto m) { return m == 0; }));
  }
}

TEST_CASE("masks and means equal a per-voxel accumulation oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> xy(-0.45, 0.45), z(-0.65, 0.65);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud pts;
    for (int i = 0; i < 20; ++i) pts.push_back({xy(rng), xy(rng), z(rng)});
    const auto t = build_targets(pts, kBase, {4, 2});
    REQUIRE(t.scales.size() == 2);
    for (const auto& s : t.scales) {
      CAPTURE(s.factor);
      CHECK(s.spec.shape == std::array<std::int64_t, 3>{8 / s.factor, 8 / s.factor, 8 / s.factor});
      const auto oracle = oracle::accumulate(pts, kBase, s.factor);
      CHECK(s.n_foreground == static_cast<std::int64_t>(oracle.size()));
      CHECK(s.n_foreground + s.n_background == s.spec.volume());
      for (std::int64_t j = 0; j < s.spec.volume(); ++j) {
        const auto v = s.spec.unlinear(j);
        const auto it = oracle.find({v.ix, v.iy, v.iz});
        REQUIRE(s.mask[j] == (it != oracle.end() ? 1 : 0));
        if (it == oracle.end()) {
          for (int a = 0; a < 3; ++a) CHECK(s.offsets[3 * j + a] == 0.0);
          continue;
        }
        const Vec3 c = s.voxel_center(j);
        const std::array<double, 3> center{c.x, c.y, c.z};
        const std::array<double, 3> cell{s.spec.cell.x, s.spec.cell.y, s.spec.cell.z};
        for (int a = 0; a < 3; ++a) {
          const double mean = it->second.sum[a] / it->second.n;
          CHECK(s.means[3 * j + a] == doctest::Approx(mean).epsilon(1e-12));
          CHECK(s.offsets[3 * j + a] == doctest::Approx(mean - center[a]).epsilon(1e-12));
          // Mean stays inside its cell, so the offset is bounded by half a cell.
          CHECK(std::abs(s.offsets[3 * j + a]) <= cell[a] / 2 + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("every occupied base voxel maps to an occupied coarse voxel") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> xy(-0.4, 0.4), z(-0.6, 0.6);
  PointCloud pts;
  for (int i = 0; i < 200; ++i) pts.push_back({xy(rng), xy(rng), z(rng)});
  const auto t = build_targets(pts, kBase, {1, 2, 4});
  const auto& base = t.scales[0];
  for (std::int64_t j = 0; j < base.spec.volume(); ++j) {
    if (!base.mask[j]) continue;
    const auto v = base.spec.unlinear(j);
    for (std::size_t k = 1; k < t.scales.size(); ++k) {
      const auto& s = t.scales[k];
      CHECK(s.mask[s.spec.linear({v.ix / s.factor, v.iy / s.factor, v.iz / s.factor})] == 1);
    }
  }
}

TEST_CASE("targets are bit-deterministic and serialize") {
  PointCloud pts;
  for (int i = 0; i < 30; ++i) pts.push_back({0.02 * i - 0.3, 0.3 - 0.015 * i, 0.01 * i - 0.2});
  const auto a = build_targets(pts, kBase);
  const auto b = build_targets(pts, kBase);
  for (std::size_t k = 0; k < a.scales.size(); ++k) {
    CHECK(a.scales[k].mask == b.scales[k].mask);
    CHECK(a.scales[k].offsets == b.scales[k].offsets);
  }
  CHECK_THROWS_AS(build_targets(pts, kBase, {0}), Error);

  const auto dir = std::filesystem::temp_directory_path() / "densedet_targets_test";
  std::filesystem::create_directories(dir);
  const auto stem = (dir / "scene").string();
  save_targets(a, stem);
  const auto bytes = read_bytes(stem + "_s2.bin");
  const auto vol = static_cast<std::size_t>(a.scales[1].spec.volume());
  CHECK(bytes.size() == vol + 12 * vol);
  CHECK(std::equal(a.scales[1].mask.begin(), a.scales[1].mask.end(), bytes.begin()));
  CHECK(read_text(stem + "_targets.json").find("\"factor\": 4") != std::string::npos);
  std::filesystem::remove_all(dir);
}
