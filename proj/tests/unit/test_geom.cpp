#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "densedet/error.hpp"
#include "densedet/geom.hpp"
#include "geom_oracles.hpp"

using namespace densedet;

TEST_CASE("points_in_box examples") {
  const OrientedBox unit{{0, 0, 0}, {1, 1, 1}, 0.0};
  CHECK(in_box({0, 0, 0}, unit));
  CHECK_FALSE(in_box({0.51, 0, 0}, unit));
  const OrientedBox rotated{{0, 0, 0}, {2, 1, 1}, std::numbers::pi / 2};
  // Canonical (0.9, -0.4, 0): within (1, 0.5, 0.5).
  CHECK(in_box({0.4, 0.9, 0}, rotated));
  CHECK_FALSE(in_box({0.9, 0.4, 0}, rotated));
  const PointCloud pts{{0, 0, 0}, {5, 0, 0}, {0.1, 0.1, 0.1}};
  const auto kept = points_in_box(pts, unit);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == pts[0]);
  CHECK(kept[1] == pts[2]);
}

TEST_CASE("points_in_box agrees with the rotation oracle on random boxes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.3, 4.0), ang(-3.14, 3.14);
  for (int trial = 0; trial < 50; ++trial) {
    const OrientedBox b{{u(rng), u(rng), u(rng) / 3}, {pos(rng), pos(rng), pos(rng)}, ang(rng)};
    for (const auto& p : oracle::random_cloud(200, 100 + trial, -5, 5)) {
      REQUIRE(in_box(p, b) == oracle::in_box(p, b));
      const auto c = to_canonical(p, b);
      const bool inside = std::abs(c.x) <= b.dims.x / 2 && std::abs(c.y) <= b.dims.y / 2 &&
                          std::abs(c.z) <= b.dims.z / 2;
      REQUIRE(in_box(p, b) == inside);
    }
  }
}

TEST_CASE("to_canonical") {
  const OrientedBox b{{1, 1, 0}, {2, 1, 1}, std::numbers::pi / 2};
  const auto c0 = to_canonical({1, 1, 0}, b);
  CHECK(std::abs(c0.x) + std::abs(c0.y) + std::abs(c0.z) == 0.0);
  const auto c = to_canonical({1, 2, 0}, b);
  CHECK(c.x == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(c.y) < 1e-15);
  const OrientedBox t{{1, -2, 3}, {1, 1, 1}, 0.0};
  const auto pt = to_canonical({4, 5, 6, 0.25}, t);
  CHECK(pt == Point3{3, 7, 3, 0.25});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ang(-3.14, 3.14);
  for (const auto& p : oracle::random_cloud(500, 4, -80, 80)) {
    const OrientedBox r{{p.z, -p.x, 0.5}, {4, 2, 1.5}, ang(rng)};
    const auto back = from_canonical(to_canonical(p, r), r);
    REQUIRE(std::abs(back.x - p.x) < 1e-9);
    REQUIRE(std::abs(back.y - p.y) < 1e-9);
    REQUIRE(std::abs(back.z - p.z) < 1e-9);
  }
}

TEST_CASE("radius outlier removal") {
  CHECK(radius_outlier_removal(PointCloud{{1, 2, 3}}, 0.5, 1).empty());
  const PointCloud same(4, Point3{1, 1, 1});
  CHECK(radius_outlier_removal(same, 0.5, 3).size() == 4);
  CHECK(radius_outlier_removal(same, 0.5, 4).empty());
  // Exactly at the radius counts as a neighbor.
  const PointCloud pair{{0, 0, 0}, {0.5, 0, 0}};
  CHECK(radius_outlier_removal(pair, 0.5, 1).size() == 2);

  SUBCASE("matches the pairwise oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto pts = oracle::random_cloud(50, seed, -1.0, 1.0);
      const auto expect = oracle::radius_inliers(pts, 0.5, 2);
      CHECK(radius_inlier_mask(pts, 0.5, 2) == expect);
      PointCloud kept;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (expect[i]) kept.push_back(pts[i]);
      CHECK(radius_outlier_removal(pts, 0.5, 2) == kept);
    }
  }
  SUBCASE("a second pass only ever removes more") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto once = radius_outlier_removal(oracle::random_cloud(80, seed, -2.0, 2.0), 0.5, 2);
      const auto twice = radius_outlier_removal(once, 0.5, 2);
      CHECK(twice.size() <= once.size());
      std::size_t j = 0;
      for (const auto& p : twice) {
        while (j < once.size() && !(once[j] == p)) ++j;
        REQUIRE(j < once.size());
        ++j;
      }
    }
  }
  SUBCASE("a second pass can remove points the first kept") {
    // Chain A-B-C with spacing 0.4: the ends have one neighbor each and go in
    // the first pass, which leaves B isolated for the second.
    const PointCloud chain{{0, 0, 0}, {0.4, 0, 0}, {0.8, 0, 0}, {5, 5, 5}, {5.1, 5, 5}, {5, 5.1, 5}};
    const auto once = radius_outlier_removal(chain, 0.5, 2);
    CHECK(once.size() == 4);
    CHECK(radius_outlier_removal(once, 0.5, 2).size() == 3);
  }
}

TEST_CASE("voxel_index") {
  const VoxelSpec s{{0, 0, 0}, {0.1, 0.1, 0.15}, {10, 10, 10}};
  CHECK(*voxel_index({0.05, 0.05, 0.05}, s) == VoxelIndex{0, 0, 0});
  CHECK(*voxel_index({0.1, 0, 0}, s) == VoxelIndex{1, 0, 0});
  CHECK_FALSE(voxel_index({-1e-12, 0, 0}, s).has_value());
  // 1.0 / double(0.1) is just below 10, so 1.0 is still in the last cell.
  CHECK(voxel_index({1.0, 0, 0}, s)->ix == 9);
  const VoxelSpec binary{{0, 0, 0}, {0.125, 0.125, 0.125}, {10, 10, 10}};
  CHECK(voxel_index({1.125, 0, 0}, binary)->ix == 9);
  CHECK_FALSE(voxel_index({1.25, 0, 0}, binary).has_value());  // upper edge is open
  CHECK(voxel_index({0.99, 0.99, 1.49}, s).has_value());

  SUBCASE("equals the rational oracle") {
    const VoxelSpec d;  // detector default
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> xy(-76.0, 76.0), z(-2.5, 4.5);
    std::uniform_int_distribution<int> edge(-752, 752);
    for (int i = 0; i < 1000; ++i) {
      Point3 p{xy(rng), xy(rng), z(rng)};
      // Half the samples sit on (binary approximations of) cell edges.
      if (i % 2 == 0) {
        p.x = edge(rng) * 0.1;
        p.y = -75.2 + (edge(rng) + 752) * 0.1;
        p.z = -2.0 + (i % 40) * 0.15;
      }
      const std::int64_t ex = oracle::rational_floor(p.x, d.origin.x, d.cell.x);
      const std::int64_t ey = oracle::rational_floor(p.y, d.origin.y, d.cell.y);
      const std::int64_t ez = oracle::rational_floor(p.z, d.origin.z, d.cell.z);
      REQUIRE(exact_floor_div(p.x, d.origin.x, d.cell.x) == ex);
      REQUIRE(exact_floor_div(p.y, d.origin.y, d.cell.y) == ey);
      REQUIRE(exact_floor_div(p.z, d.origin.z, d.cell.z) == ez);
      const bool inside = ex >= 0 && ey >= 0 && ez >= 0 && ex < d.shape[0] && ey < d.shape[1] &&
                          ez < d.shape[2];
      const auto v = voxel_index(p, d);
      REQUIRE(v.has_value() == inside);
      if (inside) REQUIRE(*v == VoxelIndex{ex, ey, ez});
    }
  }
  SUBCASE("linear and unlinear are inverse") {
    for (std::int64_t off : {0L, 1L, 9L, 10L, 123L, 999L}) CHECK(s.linear(s.unlinear(off)) == off);
    CHECK(s.linear({1, 2, 3}) == (3 * 10 + 2) * 10 + 1);
  }
  SUBCASE("coarsened keeps the extent") {
    const auto c = VoxelSpec{}.coarsened(4);
    CHECK(c.shape == std::array<std::int64_t, 3>{376, 376, 10});
    CHECK(c.cell.x == doctest::Approx(0.4));
  }
}

TEST_CASE("flip about axial plane") {
  const PointCloud p{{0, 0.3, 0}, {1, 0, 2}};
  const auto f = flip_about_axial_plane(p, FlipAxis::kX);
  CHECK(f[0] == Point3{0, -0.3, 0});
  CHECK(f[1] == p[1]);
  const auto fy = flip_about_axial_plane(p, FlipAxis::kY);
  CHECK(fy[1] == Point3{-1, 0, 2});
  const auto cloud = oracle::random_cloud(100, 5, -3, 3);
  for (auto axis : {FlipAxis::kX, FlipAxis::kY}) {
    const auto twice = flip_about_axial_plane(flip_about_axial_plane(cloud, axis), axis);
    CHECK(twice == cloud);
  }
}

TEST_CASE("box validation and yaw normalization") {
  CHECK_THROWS_AS(validate(OrientedBox{{0, 0, 0}, {0, 1, 1}}), Error);
  CHECK_THROWS_AS(validate(OrientedBox{{0, 0, 0}, {1, NAN, 1}}), Error);
  CHECK(normalize_yaw(std::numbers::pi) == doctest::Approx(-std::numbers::pi));
  CHECK(normalize_yaw(0.5 + 4 * std::numbers::pi) == doctest::Approx(0.5));
  for (double a = -20; a < 20; a += 0.37) {
    const double n = normalize_yaw(a);
    CHECK(n >= -std::numbers::pi);
    CHECK(n < std::numbers::pi);
  }
}

TEST_CASE("rotated BEV IoU") {
  const OrientedBox a{{0, 0, 0}, {2, 2, 1}, 0.0};
  CHECK(bev_iou(a, a) == doctest::Approx(1.0));
  CHECK(bev_iou(a, OrientedBox{{5, 0, 0}, {2, 2, 1}, 0.0}) == 0.0);
  // Half overlap: intersection 2, union 6.
  CHECK(bev_iou(a, OrientedBox{{1, 0, 0}, {2, 2, 1}, 0.0}) == doctest::Approx(1.0 / 3.0));
  // Square rotated 45 deg inside itself: octagon area 8 (sqrt2 - 1).
  const double oct = 8.0 * (std::sqrt(2.0) - 1.0);
  CHECK(bev_iou(a, OrientedBox{{0, 0, 0}, {2, 2, 1}, std::numbers::pi / 4}) ==
        doctest::Approx(oct / (8.0 - oct)));
  CHECK(bev_iou(a, OrientedBox{{0, 0, 0}, {2, 2, 1}, std::numbers::pi / 2}) ==
        doctest::Approx(1.0));
}

TEST_CASE("serialization round trips") {
  const auto cloud = oracle::random_cloud(37, 9, -10, 10);
  const auto bytes = encode_cloud(cloud);
  CHECK(bytes.size() == 4 + 4 + 8 + 37 * 16);
  CHECK(std::equal(kCloudMagic.begin(), kCloudMagic.end(), bytes.begin()));
  const auto back = decode_cloud(bytes);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back[i].x == static_cast<double>(static_cast<float>(cloud[i].x)));
    CHECK(back[i].feat == static_cast<double>(static_cast<float>(cloud[i].feat)));
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_cloud(bad), Error);
  bad = bytes;
  bad.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_cloud(bad), Error);

  const std::vector<OrientedBox> boxes{
      {{1, 2, 3}, {4, 2, 1.5}, 0.25, ObjectClass::kCyclist, 42},
      {{-1, 0, 0}, {0.8, 0.8, 1.8}, -3.0, ObjectClass::kPedestrian, 7}};
  CHECK(boxes_from_json(boxes_to_json(boxes)) == boxes);

  const auto dir = std::filesystem::temp_directory_path() / "densedet_geom_test";
  std::filesystem::create_directories(dir);
  write_cloud((dir / "c.bin").string(), cloud);
  CHECK(read_cloud((dir / "c.bin").string()) == back);
  write_ply((dir / "c.ply").string(), cloud);
  CHECK(read_text((dir / "c.ply").string()).starts_with("ply\n"));
  CHECK_THROWS_AS(read_cloud((dir / "missing.bin").string()), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("error classes map to exit codes") {
  CHECK(static_cast<int>(classify(ErrorCode::kUsage)) == 1);
  CHECK(static_cast<int>(classify(ErrorCode::kInvalidConfig)) == 1);
  CHECK(static_cast<int>(classify(ErrorCode::kIo)) == 2);
  CHECK(static_cast<int>(classify(ErrorCode::kEmptyInput)) == 2);
  CHECK(static_cast<int>(classify(ErrorCode::kNanLoss)) == 3);
}
