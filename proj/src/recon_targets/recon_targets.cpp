#include "densedet/recon_targets.hpp"

#include <filesystem>

#include <json.hpp>

#include "densedet/error.hpp"

namespace densedet {

OccupancyTarget build_targets(const PointCloud& object_cloud, const VoxelSpec& base_spec,
                              const std::vector<std::int64_t>& factors) {
  validate(base_spec);
  OccupancyTarget target;
  for (const auto factor : factors) {
    if (factor <= 0) fail(ErrorCode::kInvalidConfig, "target factor must be positive");
    ScaleTarget scale;
    scale.factor = factor;
    scale.spec = base_spec.coarsened(factor);
    const auto volume = static_cast<std::size_t>(scale.spec.volume());
    scale.mask.assign(volume, 0);
    scale.means.assign(3 * volume, 0.0);
    scale.offsets.assign(3 * volume, 0.0);
    std::vector<std::int64_t> counts(volume, 0);
    std::vector<double> sums(3 * volume, 0.0);
    for (const auto& p : object_cloud) {
      // Coarse cells are unions of base cells, so index through the base grid.
      const auto v = voxel_index(p, base_spec);
      if (!v) continue;
      const VoxelIndex coarse{v->ix / factor, v->iy / factor, v->iz / factor};
      const auto j = static_cast<std::size_t>(scale.spec.linear(coarse));
      ++counts[j];
      sums[3 * j] += p.x;
      sums[3 * j + 1] += p.y;
      sums[3 * j + 2] += p.z;
    }
    for (std::size_t j = 0; j < volume; ++j) {
      if (counts[j] == 0) continue;
      scale.mask[j] = 1;
      ++scale.n_foreground;
      const auto n = static_cast<double>(counts[j]);
      const Vec3 c = scale.voxel_center(static_cast<std::int64_t>(j));
      const double mean[3] = {sums[3 * j] / n, sums[3 * j + 1] / n, sums[3 * j + 2] / n};
      const double center[3] = {c.x, c.y, c.z};
      for (int a = 0; a < 3; ++a) {
        scale.means[3 * j + a] = mean[a];
        scale.offsets[3 * j + a] = mean[a] - center[a];
      }
    }
    scale.n_background = static_cast<std::int64_t>(volume) - scale.n_foreground;
    target.scales.push_back(std::move(scale));
  }
  return target;
}

void save_targets(const OccupancyTarget& target, const std::string& stem) {
  nlohmann::json header;
  header["format"] = "occupancy_target";
  header["version"] = 1;
  header["scales"] = nlohmann::json::array();
  const auto base = std::filesystem::path(stem).filename().string();
  for (const auto& s : target.scales) {
    const std::string file = base + "_s" + std::to_string(s.factor) + ".bin";
    std::vector<std::uint8_t> bytes(s.mask.begin(), s.mask.end());
    for (double v : s.offsets) {
      const auto f = static_cast<float>(v);
      const auto* raw = reinterpret_cast<const std::uint8_t*>(&f);
      bytes.insert(bytes.end(), raw, raw + sizeof(float));
    }
    write_bytes(stem + "_s" + std::to_string(s.factor) + ".bin", bytes);
    header["scales"].push_back({{"factor", s.factor},
                                {"file", file},
                                {"shape", {s.spec.shape[0], s.spec.shape[1], s.spec.shape[2]}},
                                {"origin", {s.spec.origin.x, s.spec.origin.y, s.spec.origin.z}},
                                {"cell", {s.spec.cell.x, s.spec.cell.y, s.spec.cell.z}},
                                {"layout", "x-fastest; u8 mask then 3 x f32 offsets"},
                                {"n_foreground", s.n_foreground},
                                {"n_background", s.n_background}});
  }
  write_text(stem + "_targets.json", header.dump(2));
}

}  // namespace densedet
