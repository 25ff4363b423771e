#include "densedet/dense_gen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "densedet/error.hpp"

namespace densedet {

namespace fs = std::filesystem;

FusedObject fuse_object(const TrackedSequence& seq, TrackId track_id,
                        const OutlierParams& outliers) {
  FusedObject fused;
  fused.track_id = track_id;
  bool found = false;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    for (const auto& box : frame.boxes) {
      if (box.track_id != track_id) continue;
      if (!found) {
        fused.cls = box.cls;
        fused.dims = box.dims;
        found = true;
      }
      PointCloud local;
      for (const auto& p : points_in_box(frame.points, box)) local.push_back(to_canonical(p, box));
      fused.frame_indices.push_back(f);
      fused.per_frame.push_back(std::move(local));
      break;
    }
  }
  if (!found) fail(ErrorCode::kUnknownTrack, "track " + std::to_string(track_id) + " not in sequence");

  PointCloud all;
  for (const auto& list : fused.per_frame) all.insert(all.end(), list.begin(), list.end());
  fused.points_before_filter = all.size();
  if (all.empty()) return fused;

  const auto keep = radius_inlier_mask(all, outliers.radius, outliers.min_neighbors);
  std::size_t cursor = 0;
  for (auto& list : fused.per_frame) {
    PointCloud kept;
    for (const auto& p : list) {
      if (keep[cursor++]) kept.push_back(p);
    }
    list = std::move(kept);
  }
  fused.points_after_filter =
      static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  return fused;
}

std::vector<std::size_t> sort_frames_by_count(const std::vector<PointCloud>& per_frame) {
  std::vector<std::size_t> order(per_frame.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return per_frame[a].size() > per_frame[b].size();
  });
  return order;
}

VoxelSpec object_voxel_spec(const Vec3& dims, const Vec3& cell) {
  VoxelSpec spec;
  spec.cell = cell;
  spec.origin = {-0.5 * dims.x, -0.5 * dims.y, -0.5 * dims.z};
  spec.shape = {static_cast<std::int64_t>(std::floor(dims.x / cell.x)) + 1,
                static_cast<std::int64_t>(std::floor(dims.y / cell.y)) + 1,
                static_cast<std::int64_t>(std::floor(dims.z / cell.z)) + 1};
  validate(spec);
  return spec;
}

FillResult fill_voxel_grid(const std::vector<PointCloud>& sorted_lists, const VoxelSpec& spec,
                           const FillParams& params) {
  if (sorted_lists.empty()) fail(ErrorCode::kEmptyInput, "fill_voxel_grid: no frames");

  std::unordered_set<std::int64_t> union_voxels;
  for (const auto& list : sorted_lists) {
    for (const auto& p : list) {
      if (auto v = voxel_index(p, spec)) union_voxels.insert(spec.linear(*v));
    }
  }

  FillResult result;
  result.stats.voxels_union = union_voxels.size();
  std::unordered_map<std::int64_t, std::size_t> counts;
  for (const auto& list : sorted_lists) {
    if (result.stats.voxels_union > 0 && result.stats.ratio() > params.stop_ratio) break;
    // Voxels filled before this frame are closed to it.
    std::unordered_set<std::int64_t> opened_here;
    for (const auto& p : list) {
      const auto v = voxel_index(p, spec);
      if (!v) continue;
      const auto key = spec.linear(*v);
      auto it = counts.find(key);
      if (it != counts.end() && !opened_here.contains(key)) continue;
      if (it == counts.end()) {
        it = counts.emplace(key, 0).first;
        opened_here.insert(key);
      }
      if (it->second >= params.voxel_capacity) continue;
      ++it->second;
      result.points.push_back(p);
    }
    result.stats.voxels_filled = counts.size();
    ++result.stats.frames_used;
  }
  return result;
}

PointCloud symmetrize_vehicle(const PointCloud& canonical_points, ObjectClass cls,
                              const SymmetryParams& params) {
  if (cls != ObjectClass::kVehicle || canonical_points.size() < params.min_points) {
    return canonical_points;
  }
  std::size_t positive = 0;
  std::size_t negative = 0;
  for (const auto& p : canonical_points) {
    if (p.y > 0.0) ++positive;
    if (p.y < 0.0) ++negative;
  }
  const bool keep_positive = positive >= negative;
  PointCloud side;
  PointCloud on_plane;
  for (const auto& p : canonical_points) {
    if (p.y == 0.0) {
      on_plane.push_back(p);
    } else if ((p.y > 0.0) == keep_positive) {
      side.push_back(p);
    }
  }
  PointCloud out = side;
  const auto mirrored = flip_about_axial_plane(side, FlipAxis::kX);
  out.insert(out.end(), mirrored.begin(), mirrored.end());
  out.insert(out.end(), on_plane.begin(), on_plane.end());
  return out;
}

DenseObject generate_dense_object(const TrackedSequence& seq, TrackId track_id,
                                  const DenseGenParams& params) {
  const FusedObject fused = fuse_object(seq, track_id, params.outliers);
  const auto order = sort_frames_by_count(fused.per_frame);
  std::vector<PointCloud> sorted;
  sorted.reserve(order.size());
  for (auto i : order) sorted.push_back(fused.per_frame[i]);

  const auto filled = fill_voxel_grid(sorted, object_voxel_spec(fused.dims, params.cell),
                                      params.fill);
  DenseObject obj;
  obj.track_id = track_id;
  obj.cls = fused.cls;
  obj.dims = fused.dims;
  obj.fill_stats = filled.stats;
  obj.canonical_points = symmetrize_vehicle(filled.points, fused.cls, params.symmetry);
  return obj;
}

std::vector<TrackId> track_ids(const TrackedSequence& seq) {
  std::set<TrackId> ids;
  for (const auto& f : seq.frames) {
    for (const auto& b : f.boxes) ids.insert(b.track_id);
  }
  return {ids.begin(), ids.end()};
}

DenseObjectBank build_dense_bank(const TrackedSequence& seq, const DenseGenParams& params,
                                 int workers) {
  const auto ids = track_ids(seq);
  std::vector<DenseObject> objects(ids.size());
  const auto run = [&](std::size_t i) { objects[i] = generate_dense_object(seq, ids[i], params); };
  if (workers <= 1 || ids.size() < 2) {
    for (std::size_t i = 0; i < ids.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < ids.size(); i = next++) run(i);
      });
    }
  }
  DenseObjectBank bank;
  for (auto& obj : objects) bank.emplace(obj.track_id, std::move(obj));
  return bank;
}

DenseScene compose_dense_scene(const Frame& frame, const DenseObjectBank& bank,
                               std::size_t frame_index) {
  DenseScene scene;
  scene.source_frame_index = frame_index;
  for (const auto& p : frame.points) {
    const bool inside = std::any_of(frame.boxes.begin(), frame.boxes.end(),
                                    [&](const OrientedBox& b) { return in_box(p, b); });
    if (!inside) scene.dense_cloud.push_back(p);
  }
  scene.background_count = scene.dense_cloud.size();
  for (const auto& box : frame.boxes) {
    const auto it = bank.find(box.track_id);
    if (it == bank.end()) {
      const auto raw = points_in_box(frame.points, box);
      scene.object_only_cloud.insert(scene.object_only_cloud.end(), raw.begin(), raw.end());
      continue;
    }
    for (const auto& p : it->second.canonical_points) {
      scene.object_only_cloud.push_back(from_canonical(p, box));
    }
  }
  scene.dense_cloud.insert(scene.dense_cloud.end(), scene.object_only_cloud.begin(),
                           scene.object_only_cloud.end());
  return scene;
}

// --- persistence -----------------------------------------------------------

namespace {

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.bin", i);
  return buf;
}

}  // namespace

void save_sequence(const TrackedSequence& seq, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");
  nlohmann::json index;
  index["format"] = "tracked_sequence";
  index["version"] = 1;
  index["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const std::string rel = "frames/" + frame_name(i);
    write_cloud((fs::path(dir) / rel).string(), seq.frames[i].points);
    index["frames"].push_back(
        {{"cloud", rel}, {"boxes", nlohmann::json::parse(boxes_to_json(seq.frames[i].boxes))}});
  }
  write_text((fs::path(dir) / "sequence.json").string(), index.dump(2));
}

TrackedSequence load_sequence(const std::string& dir) {
  TrackedSequence seq;
  try {
    const auto index = nlohmann::json::parse(read_text((fs::path(dir) / "sequence.json").string()));
    for (const auto& f : index.at("frames")) {
      Frame frame;
      frame.points = read_cloud((fs::path(dir) / f.at("cloud").get<std::string>()).string());
      frame.boxes = boxes_from_json(f.at("boxes").dump());
      seq.frames.push_back(std::move(frame));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed sequence index: ") + e.what());
  }
  return seq;
}

void save_bank(const DenseObjectBank& bank, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json index;
  index["format"] = "dense_object_bank";
  index["version"] = 1;
  index["objects"] = nlohmann::json::array();
  for (const auto& [id, obj] : bank) {
    const std::string rel = "track_" + std::to_string(id) + ".bin";
    write_cloud((fs::path(dir) / rel).string(), obj.canonical_points);
    index["objects"].push_back({{"track_id", id},
                                {"class", std::string(to_string(obj.cls))},
                                {"dims", {obj.dims.x, obj.dims.y, obj.dims.z}},
                                {"cloud", rel},
                                {"points", obj.canonical_points.size()},
                                {"fill_stats",
                                 {{"voxels_filled", obj.fill_stats.voxels_filled},
                                  {"voxels_union", obj.fill_stats.voxels_union},
                                  {"frames_used", obj.fill_stats.frames_used},
                                  {"ratio", obj.fill_stats.ratio()}}}});
  }
  write_text((fs::path(dir) / "index.json").string(), index.dump(2));
}

DenseObjectBank load_bank(const std::string& dir) {
  DenseObjectBank bank;
  try {
    const auto index = nlohmann::json::parse(read_text((fs::path(dir) / "index.json").string()));
    for (const auto& o : index.at("objects")) {
      DenseObject obj;
      obj.track_id = o.at("track_id").get<TrackId>();
      obj.cls = object_class_from_string(o.at("class").get<std::string>());
      const auto& d = o.at("dims");
      obj.dims = {d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>()};
      const auto& s = o.at("fill_stats");
      obj.fill_stats.voxels_filled = s.at("voxels_filled").get<std::size_t>();
      obj.fill_stats.voxels_union = s.at("voxels_union").get<std::size_t>();
      obj.fill_stats.frames_used = s.at("frames_used").get<std::size_t>();
      obj.canonical_points = read_cloud((fs::path(dir) / o.at("cloud").get<std::string>()).string());
      bank.emplace(obj.track_id, std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed bank index: ") + e.what());
  }
  return bank;
}

}  // namespace densedet
