// Prints one PASS/FAIL line per acceptance criterion. Tolerances and sizes
// are fixed here; `--only 1,3` restricts the run to the listed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "densedet/autodiff/checkpoint.hpp"
#include "densedet/cli.hpp"
#include "densedet/config.hpp"
#include "densedet/dense_gen.hpp"
#include "densedet/losses.hpp"
#include "densedet/module_checks.hpp"
#include "densedet/pcr.hpp"
#include "densedet/recon_targets.hpp"
#include "densedet/synth_lidar.hpp"
#include "densedet/train_eval.hpp"
#include "geom_oracles.hpp"
#include "oracles.hpp"

using namespace densedet;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr int kGeometryCases = 1000;
constexpr double kGeometrySeconds = 10.0;
constexpr int kFillTracks = 100;
constexpr double kFillRatio = 0.95;
constexpr std::size_t kVoxelCapacity = 5;
constexpr double kMirrorTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kAdjointTol = 1e-9;
constexpr double kMaskTol = 1e-12;
constexpr double kPcrSlack = 0.02;
constexpr double kAblationSeconds = 15 * 60;
// Absolute, in learning-rate units.
constexpr double kScheduleTol = 1e-15;

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("densedet_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = bytes(e.path());
  return files;
}

// --- 1 ---------------------------------------------------------------------

Verdict geometry_oracles() {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.3, 4.0), ang(-std::numbers::pi, std::numbers::pi);

  for (int c = 0; c < kGeometryCases; ++c) {
    const OrientedBox b{{u(rng), u(rng), u(rng) / 3}, {pos(rng), pos(rng), pos(rng)}, ang(rng)};
    const auto pts = oracle::random_cloud(50, 10'000 + c, -5, 5);
    PointCloud expect;
    for (const auto& p : pts)
      if (oracle::in_box(p, b)) expect.push_back(p);
    mismatches += !(points_in_box(pts, b) == expect);
  }

  const VoxelSpec grid;
  std::uniform_real_distribution<double> xy(-76.0, 76.0), z(-2.5, 4.5);
  std::uniform_int_distribution<int> edge(-752, 752);
  for (int c = 0; c < kGeometryCases; ++c) {
    Point3 p{xy(rng), xy(rng), z(rng)};
    if (c % 2 == 0) {  // on binary approximations of cell edges
      p.x = edge(rng) * 0.1;
      p.y = -75.2 + (edge(rng) + 752) * 0.1;
      p.z = -2.0 + (c % 40) * 0.15;
    }
    const std::array<std::int64_t, 3> e{oracle::rational_floor(p.x, grid.origin.x, grid.cell.x),
                                        oracle::rational_floor(p.y, grid.origin.y, grid.cell.y),
                                        oracle::rational_floor(p.z, grid.origin.z, grid.cell.z)};
    bool inside = true;
    for (int a = 0; a < 3; ++a) inside = inside && e[a] >= 0 && e[a] < grid.shape[a];
    const auto v = voxel_index(p, grid);
    mismatches += v.has_value() != inside || (inside && !(*v == VoxelIndex{e[0], e[1], e[2]}));
  }

  for (int c = 0; c < kGeometryCases; ++c) {
    const auto pts = oracle::random_cloud(30, 20'000 + c, -1.0, 1.0);
    const auto keep = oracle::radius_inliers(pts, 0.5, 2);
    PointCloud expect;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (keep[i]) expect.push_back(pts[i]);
    mismatches += !(radius_outlier_removal(pts, 0.5, 2) == expect);
  }

  const VoxelSpec base{{-0.4, -0.4, -0.6}, {0.1, 0.1, 0.15}, {8, 8, 8}};
  for (int c = 0; c < kGeometryCases; ++c) {
    auto pts = oracle::random_cloud(20, 30'000 + c, -0.45, 0.45);
    for (auto& p : pts) p.z *= 0.65 / 0.45;
    const auto t = build_targets(pts, base, {4, 2});
    for (const auto& s : t.scales) {
      const auto ref = oracle::accumulate(pts, base, s.factor);
      bool ok = s.n_foreground == static_cast<std::int64_t>(ref.size());
      for (std::int64_t j = 0; ok && j < s.spec.volume(); ++j) {
        const auto v = s.spec.unlinear(j);
        const auto it = ref.find({v.ix, v.iy, v.iz});
        ok = s.mask[j] == (it != ref.end() ? 1 : 0);
        if (!ok || it == ref.end()) continue;
        for (int a = 0; a < 3; ++a) {
          const double mean = it->second.sum[a] / it->second.n;
          ok = ok && std::abs(s.means[3 * j + a] - mean) <= 1e-12 * std::max(1.0, std::abs(mean));
        }
      }
      mismatches += !ok;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kGeometrySeconds,
          fmt("4 x %d cases, %zu mismatches, %.2fs (limit %.0fs)", kGeometryCases, mismatches, secs,
              kGeometrySeconds)};
}

// --- 2 ---------------------------------------------------------------------

bool mirror_symmetric(const PointCloud& pts) {
  using Key = std::array<double, 3>;
  std::vector<Key> a, b;
  for (const auto& p : pts) {
    a.push_back({p.x, p.y, p.z});
    b.push_back({p.x, -p.y, p.z});
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 3; ++k)
      if (std::abs(a[i][k] - b[i][k]) > kMirrorTol) return false;
  return true;
}

Verdict fill_rules() {
  int tracks = 0, ratio_fail = 0, capacity_fail = 0, symmetry_fail = 0, symmetrized = 0, early_stop = 0;
  for (std::uint64_t seed = 1; tracks < kFillTracks; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    const auto seq = generate_sequence(cfg);
    for (const auto id : track_ids(seq)) {
      if (tracks == kFillTracks) break;
      const auto fused = fuse_object(seq, id);
      if (fused.per_frame.empty()) continue;
      ++tracks;
      std::vector<PointCloud> lists;
      for (const auto i : sort_frames_by_count(fused.per_frame)) lists.push_back(fused.per_frame[i]);
      const auto spec = object_voxel_spec(fused.dims);
      const auto fill = fill_voxel_grid(lists, spec);
      const bool reached = fill.stats.ratio() > kFillRatio;
      early_stop += reached && fill.stats.frames_used < lists.size();
      ratio_fail += !(reached || fill.stats.frames_used == lists.size());
      std::map<std::int64_t, std::size_t> counts;
      for (const auto& p : fill.points)
        if (const auto v = voxel_index(p, spec)) ++counts[spec.linear(*v)];
      for (const auto& [voxel, n] : counts) capacity_fail += n > kVoxelCapacity;
      if (fused.cls == ObjectClass::kVehicle && fill.points.size() >= SymmetryParams{}.min_points) {
        ++symmetrized;
        symmetry_fail += !mirror_symmetric(symmetrize_vehicle(fill.points, fused.cls));
      }
    }
  }
  return {ratio_fail == 0 && capacity_fail == 0 && symmetry_fail == 0 && symmetrized > 0,
          fmt("%d tracks (%d stopped early), fill-rule violations %d, over-capacity voxels %d, "
              "asymmetric vehicles %d of %d",
              tracks, early_stop, ratio_fail, capacity_fail, symmetry_fail, symmetrized)};
}

// --- 3 ---------------------------------------------------------------------

Verdict autodiff_checks() {
  double worst = 0.0;
  std::string worst_name;
  const auto names = checkable_modules();
  for (const auto& name : names) {
    const auto r = check_module_gradients(name, 0, 1e-5);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  }
  double gap = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) gap = std::max(gap, conv_adjoint_gap(seed));
  return {worst < kGradTol && gap <= kAdjointTol,
          fmt("%zu modules, worst relative error %.2e (%s, limit %.0e), adjoint gap %.2e (limit %.0e)",
              names.size(), worst, worst_name.c_str(), kGradTol, gap, kAdjointTol)};
}

// --- 4 ---------------------------------------------------------------------

Verdict loss_identities() {
  using ad::Tensor;
  const auto C = [](ad::Shape s, std::vector<double> v) { return Tensor::constant(std::move(s), std::move(v)); };
  const LossWeights w;
  std::vector<std::string> failed;

  const auto fa = oracle::random_vector(48, 1), fb = oracle::random_vector(48, 2);
  const double equal = l_s2d(C({3, 16}, fa), C({3, 16}, fa), C({3, 16}, fb), C({3, 16}, fb), w.beta, w.gamma).item();
  if (equal != 0.0) failed.push_back("l_s2d(equal)");

  const auto g = C({1}, {0.7});
  const double single = l_s2d(C({1}, {0.0}), C({1}, {1.0}), g, g, w.beta, w.gamma).item();
  if (single != 10.0) failed.push_back(fmt("l_s2d(single)=%.17g", single));

  const double mask = l_mask(C({1, 2}, {0.5, 0.5}), std::vector<std::uint8_t>{1, 0}).item();
  if (std::abs(mask - 2 * std::numbers::ln2) > kMaskTol) failed.push_back(fmt("l_mask=%.17g", mask));

  const std::size_t v = 10;
  const auto centers = oracle::random_vector(3 * v, 3);
  const auto gt = oracle::random_vector(2 * 3 * v, 4);
  std::vector<double> offsets(gt.size());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3 * v; ++i) offsets[b * 3 * v + i] = gt[b * 3 * v + i] - centers[i];
  const double off = l_offset(C({2, 3, v}, offsets), centers, gt, std::vector<std::uint8_t>(2 * v, 1)).item();
  if (std::abs(off) > 1e-15) failed.push_back(fmt("l_offset=%.3g", off));

  const auto pts = reconstruct_points(Tensor::full({2, 1, v}, 1.0), Tensor::zeros({2, 3, v}), centers);
  bool assembled = true;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3 * v; ++i) assembled = assembled && pts.data()[b * 3 * v + i] == centers[i];
  if (!assembled) failed.push_back("assembly");

  std::string detail = fmt("l_s2d equal=%g single=%g, l_mask=%.15f (2 ln 2=%.15f), l_offset=%g, assembly %s",
                           equal, single, mask, 2 * std::numbers::ln2, off, assembled ? "exact" : "wrong");
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

// --- 5 ---------------------------------------------------------------------

ArchConfig small_arch() {
  ArchConfig a;
  a.grid = {{-6.4, -6.4, -0.4}, {0.8, 0.8, 0.4}, {16, 16, 8}};
  a.encoder_hidden = 4;
  a.encoder_channels = 4;
  a.stage1_channels = 4;
  a.stage2_channels = 6;
  a.bev_channels = 6;
  a.head_channels = 6;
  a.s2d_channels = 4;
  a.pcr_channels = 3;
  return a;
}

Verdict frozen_teacher() {
  BenchmarkConfig bc;
  bc.scene.seed = 5;
  bc.scene.n_frames = 10;
  bc.scene.extent = 6.0;
  bc.scene.n_objects = {1, 1, 1};
  bc.train_sequences = 2;
  bc.eval_sequences = 0;
  const auto data = make_benchmark(bc).train;
  Detector teacher(small_arch(), {}, 1);
  TrainConfig tc;
  tc.steps = 20;
  train_ddet(teacher, data, tc);

  const auto dir = scratch("frozen");
  ad::save_checkpoint(teacher.params(), (dir / "before").string());
  teacher.params().zero_grad();
  TrainConfig sc;  // full-length student stage
  sc.ablation = {true, true, true};
  Detector student(small_arch(), student_options(sc.ablation), 2);
  const auto log = train_sdet(student, teacher, data, sc);
  ad::save_checkpoint(teacher.params(), (dir / "after").string());

  const bool same = bytes(dir / "before.bin") == bytes(dir / "after.bin") &&
                    bytes(dir / "before.json") == bytes(dir / "after.json");
  std::size_t nonzero = 0, tensors = 0;
  for (const auto* p : teacher.params().all()) {
    ++tensors;
    nonzero += std::count_if(p->grad.begin(), p->grad.end(), [](double g) { return g != 0.0; });
  }
  return {same && nonzero == 0 && log.size() == sc.steps,
          fmt("%zu student steps, checkpoint bytes %s, %zu nonzero gradients over %zu teacher tensors",
              log.size(), same ? "unchanged" : "CHANGED", nonzero, tensors)};
}

// --- 6 ---------------------------------------------------------------------

Verdict toy_ablation(const std::string& config_path) {
  const auto cfg = load_config(config_path);
  const auto t0 = Clock::now();
  const auto result = run_ablation(cfg, [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); });
  const double secs = seconds_since(t0);
  std::map<std::string, std::size_t> row;
  for (std::size_t r = 0; r < result.labels.size(); ++r) row[result.labels[r]] = r;
  for (const char* need : {"Baseline", "+ Distillation", "+ S2D", "+ PCR"})
    if (!row.count(need)) return {false, fmt("row '%s' missing from the configured ablation", need)};

  const auto vehicle = static_cast<std::size_t>(ObjectClass::kVehicle);
  const auto mean_ap = [&](const char* label) {
    double s = 0;
    for (const auto& rep : result.reports[row.at(label)]) s += rep.classes[vehicle].ap;
    return s / static_cast<double>(result.seeds.size());
  };
  const double base = mean_ap("Baseline"), dist = mean_ap("+ Distillation"), s2d = mean_ap("+ S2D"),
               pcr = mean_ap("+ PCR");
  const bool ap_order = base < dist && dist < s2d;
  const bool pcr_ok = pcr >= s2d - kPcrSlack;

  bool mse_chain = true;
  std::string mse;
  for (std::size_t k = 0; k < result.seeds.size(); ++k) {
    const double b = result.reports[row.at("Baseline")][k].feature_mse;
    const double d = result.reports[row.at("+ Distillation")][k].feature_mse;
    const double s = result.reports[row.at("+ S2D")][k].feature_mse;
    mse_chain = mse_chain && b > d && d > s;
    mse += fmt(" seed %llu: %.3g > %.3g > %.3g%s;", static_cast<unsigned long long>(result.seeds[k]), b, d, s,
               b > d && d > s ? "" : " (violated)");
  }
  const bool seeds_ok = result.seeds.size() >= 3;
  return {ap_order && pcr_ok && mse_chain && seeds_ok && secs < kAblationSeconds,
          fmt("%zu seeds, %.0fs (limit %.0fs); mean vehicle AP base %.4f, distill %.4f, s2d %.4f, pcr %.4f "
              "[order %s, pcr %s];",
              result.seeds.size(), secs, kAblationSeconds, base, dist, s2d, pcr, ap_order ? "ok" : "violated",
              pcr_ok ? "ok" : "violated") +
              " feature MSE" + mse};
}

// --- 7 ---------------------------------------------------------------------

const char* kDeterminismConfig = R"(
[scene]
n_frames = 6
extent = 6.0
n_objects = [2, 1, 1]

[benchmark]
train_sequences = 1
eval_sequences = 1

[grid]
origin = [-6.4, -6.4, -0.4]
cell = [0.8, 0.8, 0.4]
shape = [16, 16, 8]

[arch]
encoder_hidden = 4
encoder_channels = 4
stage1_channels = 4
stage2_channels = 6
bev_channels = 6
head_channels = 6
s2d_channels = 4
pcr_channels = 3

[ddet]
steps = 8

[sdet]
steps = 8
)";

Verdict determinism() {
  const auto dir = scratch("determinism");
  const auto cfg = (dir / "cfg.toml").string();
  std::ofstream(cfg) << kDeterminismConfig;
  std::ostringstream sink;
  const auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "densedet");
    return run_cli(args, sink, sink) == 0;
  };
  std::vector<std::string> differing;
  bool ran = true;
  std::array<fs::path, 2> runs{dir / "a", dir / "b"};
  for (const auto& r : runs) {
    const auto s = r.string();
    ran = ran && cli({"gen", "--config", cfg, "--seed", "11", "--out", s + "/seq"});
    ran = ran && cli({"densify", "--config", cfg, "--data", s + "/seq", "--out", s + "/bank", "--workers", "1"});
    ran = ran && cli({"train", "--config", cfg, "--stage", "ddet", "--seed", "3", "--data", s + "/seq", "--out",
                      s + "/teacher", "--log", s + "/teacher.jsonl", "--workers", "1"});
    ran = ran && cli({"train", "--config", cfg, "--stage", "sdet", "--ablation", "+distill,+s2d,+pcr", "--seed", "4",
                      "--teacher", s + "/teacher", "--data", s + "/seq", "--out", s + "/student", "--log",
                      s + "/student.jsonl", "--workers", "1"});
  }
  if (!ran) return {false, "a subcommand failed: " + sink.str()};
  const auto a = tree(runs[0]), b = tree(runs[1]);
  for (const auto& [name, content] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != content) differing.push_back(name);
  }
  if (a.size() != b.size()) differing.push_back("(file sets differ)");
  std::string detail = fmt("gen, densify, train ddet, train sdet twice: %zu files compared", a.size());
  for (const auto& d : differing) detail += ", differs: " + d;
  return {differing.empty() && a.size() > 4, detail};
}

// --- 8 ---------------------------------------------------------------------

Verdict schedule() {
  const OneCycle s;
  const double lo = 0.0003, hi = 0.003, end = lo * s.final_factor;
  double worst = 0.0;
  bool shape = true;
  for (const std::size_t total : {10u, 101u, 200u, 1000u}) {
    const auto peak = static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(total)));
    for (std::size_t k = 0; k < total; ++k) {
      const double expected =
          k <= peak ? hi + (lo - hi) * (1 + std::cos(std::numbers::pi * k / peak)) / 2
                    : end + (hi - end) * (1 + std::cos(std::numbers::pi * (k - peak) / (total - 1 - peak))) / 2;
      worst = std::max(worst, std::abs(one_cycle_lr(s, k, total) - expected));
    }
    shape = shape && std::abs(one_cycle_lr(s, 0, total) - lo) <= kScheduleTol &&
            std::abs(one_cycle_lr(s, peak, total) - hi) <= kScheduleTol;
    for (std::size_t k = 0; k < total; ++k) shape = shape && one_cycle_lr(s, k, total) <= one_cycle_lr(s, peak, total);
  }
  return {worst <= kScheduleTol && shape,
          fmt("totals 10/101/200/1000: worst absolute gap %.2e (limit %.0e), lr(0)=%.4g, peak %.4g at step %d of 200",
              worst, kScheduleTol, one_cycle_lr(s, 0, 200), one_cycle_lr(s, 60, 200), 60)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string config = DENSEDET_TOY_CONFIG;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else if (arg == "--config" && i + 1 < argc) {
      config = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--config toy.toml]\n", argv[0]);
      return 1;
    }
  }
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"geometry oracles", geometry_oracles},
      {"fill-rule invariants", fill_rules},
      {"autodiff gradient checks", autodiff_checks},
      {"loss identities", loss_identities},
      {"frozen teacher", frozen_teacher},
      {"toy ablation", [&] { return toy_ablation(config); }},
      {"determinism", determinism},
      {"one-cycle schedule", schedule},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("ACCEPTANCE %d %s %s: %s\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
