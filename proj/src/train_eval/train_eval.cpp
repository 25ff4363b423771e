#include "densedet/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "densedet/autodiff/checkpoint.hpp"
#include "densedet/autodiff/ops.hpp"
#include "densedet/error.hpp"

namespace densedet {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Runs f(i) for i in [0, n) on up to `workers` threads.
template <typename F>
void parallel_for(std::size_t n, int workers, F f) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

// --- data ------------------------------------------------------------------

std::vector<Sample> make_samples(const TrackedSequence& seq, const DenseGenParams& dense,
                                 int workers) {
  const auto bank = build_dense_bank(seq, dense, workers);
  std::vector<Sample> out;
  out.reserve(seq.frames.size());
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& frame = seq.frames[t];
    auto scene = compose_dense_scene(frame, bank, t);
    out.push_back({frame.points, std::move(scene.dense_cloud), std::move(scene.object_only_cloud),
                   frame.boxes});
  }
  return out;
}

Benchmark make_benchmark(const BenchmarkConfig& cfg, int workers) {
  Benchmark b;
  const auto add = [&](std::vector<Sample>& dst, std::uint64_t tag, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      SceneConfig scene = cfg.scene;
      scene.seed = mix(cfg.scene.seed, tag + i);
      auto samples = make_samples(generate_sequence(scene), cfg.dense, workers);
      dst.insert(dst.end(), std::make_move_iterator(samples.begin()),
                 std::make_move_iterator(samples.end()));
    }
  };
  add(b.train, 0, cfg.train_sequences);
  add(b.eval, 1u << 20, cfg.eval_sequences);
  return b;
}

// --- augmentation ----------------------------------------------------------

GlobalTransform sample_transform(std::uint64_t seed, const AugmentRanges& r) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  GlobalTransform t;
  t.flip_y = u01(rng) < r.flip_probability;
  t.rotation = uniform(-r.max_rotation, r.max_rotation);
  t.scale = uniform(r.min_scale, r.max_scale);
  t.translation = {uniform(-r.max_translation, r.max_translation),
                   uniform(-r.max_translation, r.max_translation),
                   uniform(-r.max_translation, r.max_translation)};
  return t;
}

Point3 apply(const GlobalTransform& t, const Point3& p) {
  const double y = t.flip_y ? -p.y : p.y;
  const double c = std::cos(t.rotation), s = std::sin(t.rotation);
  return {t.scale * (c * p.x - s * y) + t.translation.x,
          t.scale * (s * p.x + c * y) + t.translation.y, t.scale * p.z + t.translation.z, p.feat};
}

OrientedBox apply(const GlobalTransform& t, const OrientedBox& b) {
  OrientedBox out = b;
  const Point3 c = apply(t, Point3{b.center.x, b.center.y, b.center.z, 0.0});
  out.center = {c.x, c.y, c.z};
  out.dims = {b.dims.x * t.scale, b.dims.y * t.scale, b.dims.z * t.scale};
  out.yaw = normalize_yaw((t.flip_y ? -b.yaw : b.yaw) + t.rotation);
  return out;
}

Sample apply(const GlobalTransform& t, const Sample& s) {
  const auto cloud = [&](const PointCloud& in) {
    PointCloud out(in.size());
    std::transform(in.begin(), in.end(), out.begin(), [&](const Point3& p) { return apply(t, p); });
    return out;
  };
  Sample out{cloud(s.sparse), cloud(s.dense), cloud(s.dense_objects), {}};
  out.boxes.reserve(s.boxes.size());
  for (const auto& b : s.boxes) out.boxes.push_back(apply(t, b));
  return out;
}

Sample augment_scene(const Sample& s, std::uint64_t seed, const AugmentRanges& ranges) {
  return apply(sample_transform(seed, ranges), s);
}

// --- schedule and optimizer -------------------------------------------------

double one_cycle_lr(const OneCycle& s, std::size_t step, std::size_t total) {
  const double lo = s.max_lr * s.div_factor;
  const double end = lo * s.final_factor;
  if (total <= 1) return lo;
  const auto peak = static_cast<std::size_t>(std::llround(s.pct_start * static_cast<double>(total)));
  const auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (step <= peak) {
    return peak == 0 ? s.max_lr
                     : cosine(lo, s.max_lr, static_cast<double>(step) / static_cast<double>(peak));
  }
  const std::size_t last = total - 1;
  if (last <= peak) return s.max_lr;
  return cosine(s.max_lr, end,
                static_cast<double>(std::min(step, last) - peak) / static_cast<double>(last - peak));
}

double adamw_step(ad::ParamStore& store, const AdamWConfig& cfg, double lr, std::size_t step) {
  double sq = 0.0;
  for (const auto* p : store.trainable()) {
    for (double g : p->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) fail(ErrorCode::kNonFinite, "adamw: non-finite gradient norm");
  const double clip = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto* p : store.trainable()) {
    if (p->grad.empty()) continue;
    if (p->m.empty()) p->m.assign(p->value.size(), 0.0);
    if (p->v.empty()) p->v.assign(p->value.size(), 0.0);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i] * clip;
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
      const double update = (p->m[i] / bc1) / (std::sqrt(p->v[i] / bc2) + cfg.eps);
      p->value[i] -= lr * (update + cfg.weight_decay * p->value[i]);
    }
  }
  return norm;
}

// --- ablation rows -----------------------------------------------------------

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{{"Baseline", {false, false, false}},
                                             {"+ Distillation", {true, false, false}},
                                             {"+ S2D", {true, true, false}},
                                             {"+ PCR", {true, true, true}},
                                             {"- Distillation", {false, true, true}}};
  return rows;
}

Ablation parse_ablation(const std::string& text) {
  Ablation a;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
               item.end());
    if (item.empty() || item == "baseline") continue;
    if (item == "+distill") a.distill = true;
    else if (item == "+s2d") a.s2d = true;
    else if (item == "+pcr") a.pcr = true;
    else fail(ErrorCode::kUsage, "unknown ablation flag '" + item + "' (use +distill,+s2d,+pcr)");
  }
  return a;
}

NetworkOptions student_options(const Ablation& a) { return {a.s2d, a.pcr}; }

// --- training ----------------------------------------------------------------

std::string to_json(const StepLog& l) {
  return json{{"step", l.step},   {"lr", l.lr},         {"grad_norm", l.grad_norm},
              {"hm", l.hm},       {"reg", l.reg},       {"s2d", l.s2d},
              {"mask", l.mask},   {"offset", l.offset}, {"hm_distill", l.hm_distill},
              {"total", l.total}}
      .dump();
}

namespace {

// Fixed per-run sample order: a fresh shuffle of the data per epoch.
class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::uint64_t seed) : n_(n), rng_(mix(seed, 0xba7c)) {}

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == perm_.size()) {
        perm_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
        std::shuffle(perm_.begin(), perm_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(perm_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

struct PreparedBatch {
  std::vector<Sample> samples;
  std::vector<HeadTargets> heads;
  std::vector<OccupancyTarget> occupancy;
};

PreparedBatch prepare_batch(const std::vector<Sample>& data, const std::vector<std::size_t>& idx,
                            const TrainConfig& cfg, std::size_t step, const ArchConfig& arch,
                            bool need_occupancy) {
  PreparedBatch b;
  b.samples.resize(idx.size());
  b.heads.resize(idx.size());
  if (need_occupancy) b.occupancy.resize(idx.size());
  const BevGrid bev = bev_grid(arch.grid);
  parallel_for(idx.size(), cfg.workers, [&](std::size_t k) {
    const Sample& src = data[idx[k]];
    b.samples[k] = cfg.augment ? augment_scene(src, mix(mix(cfg.seed, step), k), cfg.augment_ranges)
                               : src;
    b.heads[k] = make_head_targets(b.samples[k].boxes, bev, arch.num_classes);
    if (need_occupancy) b.occupancy[k] = build_targets(b.samples[k].dense_objects, arch.grid);
  });
  return b;
}

enum class CloudKind { kSparse, kDense, kDenseObjects };

VoxelInput voxelize_batch(const std::vector<Sample>& samples, CloudKind kind, const VoxelSpec& grid) {
  std::vector<const PointCloud*> clouds;
  for (const auto& s : samples) {
    clouds.push_back(kind == CloudKind::kSparse  ? &s.sparse
                     : kind == CloudKind::kDense ? &s.dense
                                                 : &s.dense_objects);
  }
  return voxelize(clouds, grid);
}

void detection_losses(const DetectorOutputs& out, const std::vector<HeadTargets>& targets,
                      const LossWeights& w, LossParts& parts) {
  std::vector<double> hm, reg;
  std::vector<std::uint8_t> peaks;
  for (const auto& t : targets) {
    hm.insert(hm.end(), t.heatmap.begin(), t.heatmap.end());
    reg.insert(reg.end(), t.regression.begin(), t.regression.end());
    peaks.insert(peaks.end(), t.peaks.begin(), t.peaks.end());
  }
  parts.hm = focal_heatmap(out.heatmap, hm, w.focal_alpha, w.focal_beta);
  parts.reg = l_reg(out.regression, reg, peaks);
}

void reconstruction_losses(const PCROutputs& pcr, const std::vector<OccupancyTarget>& targets,
                           LossParts& parts) {
  Tensor mask_sum, offset_sum;
  for (std::size_t s = 0; s < pcr.scales.size(); ++s) {
    const auto& spec = targets.front().scales.at(s).spec;
    const auto vol = static_cast<std::size_t>(spec.volume());
    const auto& pred = pcr.scales[s];
    if (pred.mask.numel() != targets.size() * vol) {
      fail(ErrorCode::kShapeMismatch, "reconstruction scale " + std::to_string(s) + ": prediction " +
                                          ad::shape_str(pred.mask.shape()) + " vs " +
                                          std::to_string(vol) + " target voxels");
    }
    std::vector<double> centers(3 * vol);
    for (std::size_t j = 0; j < vol; ++j) {
      const Vec3 c = spec.center(spec.unlinear(static_cast<std::int64_t>(j)));
      centers[j] = c.x;
      centers[vol + j] = c.y;
      centers[2 * vol + j] = c.z;
    }
    std::vector<std::uint8_t> fg;
    std::vector<double> gt(targets.size() * 3 * vol);
    for (std::size_t b = 0; b < targets.size(); ++b) {
      const auto& t = targets[b].scales.at(s);
      fg.insert(fg.end(), t.mask.begin(), t.mask.end());
      for (std::size_t j = 0; j < vol; ++j)
        for (std::size_t a = 0; a < 3; ++a) gt[(b * 3 + a) * vol + j] = t.means[3 * j + a];
    }
    const Tensor lm = l_mask(pred.mask, fg);
    const Tensor lo = l_offset(pred.offset, centers, gt, fg);
    mask_sum = mask_sum.defined() ? ad::add(mask_sum, lm) : lm;
    offset_sum = offset_sum.defined() ? ad::add(offset_sum, lo) : lo;
  }
  parts.mask = mask_sum;
  parts.offset = offset_sum;
}

double value_of(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

StepLog make_log(std::size_t step, double lr, const LossParts& p, const Tensor& total) {
  StepLog l;
  l.step = step;
  l.lr = lr;
  l.hm = value_of(p.hm);
  l.reg = value_of(p.reg);
  l.s2d = value_of(p.s2d);
  l.mask = value_of(p.mask);
  l.offset = value_of(p.offset);
  l.hm_distill = value_of(p.hm_distill);
  l.total = total.item();
  return l;
}

void check_loss(const StepLog& log, const TrainConfig& cfg, const char* stage) {
  if (std::isfinite(log.total)) return;
  if (!cfg.dump_dir.empty()) {
    std::filesystem::create_directories(cfg.dump_dir);
    json dump = json::parse(to_json(log), nullptr, false, true);
    dump["stage"] = stage;
    dump["seed"] = cfg.seed;
    std::ofstream(std::filesystem::path(cfg.dump_dir) / "nan_dump.json") << dump.dump(2) << "\n";
  }
  fail(ErrorCode::kNanLoss, std::string(stage) + ": non-finite loss at step " +
                                std::to_string(log.step));
}

class LogWriter {
 public:
  explicit LogWriter(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) fail(ErrorCode::kIo, "cannot write log " + path);
    }
  }
  void write(const StepLog& l) {
    if (out_.is_open()) out_ << to_json(l) << "\n";
  }

 private:
  std::ofstream out_;
};

void require_data(const std::vector<Sample>& data, const TrainConfig& cfg) {
  if (data.empty()) fail(ErrorCode::kEmptyInput, "training data is empty");
  if (cfg.batch_size == 0) fail(ErrorCode::kInvalidConfig, "batch_size must be positive");
  validate(cfg.loss);
}

}  // namespace

std::vector<StepLog> train_ddet(Detector& teacher, const std::vector<Sample>& data,
                                const TrainConfig& cfg, const StepCallback& on_step) {
  require_data(data, cfg);
  BatchOrder order(data.size(), cfg.seed);
  LogWriter writer(cfg.log_path);
  std::vector<StepLog> logs;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = prepare_batch(data, order.next(cfg.batch_size), cfg, step, teacher.arch(), false);
    const double lr = one_cycle_lr(cfg.schedule, step, cfg.steps);
    teacher.params().zero_grad();
    StepLog log;
    {
      Tape tape;
      const auto out = teacher.forward(tape, voxelize_batch(batch.samples, CloudKind::kDense,
                                                            teacher.arch().grid),
                                       true);
      LossParts parts;
      detection_losses(out, batch.heads, cfg.loss, parts);
      const Tensor total = total_ddet(parts, cfg.loss);
      log = make_log(step, lr, parts, total);
      check_loss(log, cfg, "ddet");
      tape.backward(total);
    }
    log.grad_norm = adamw_step(teacher.params(), cfg.optimizer, lr, step + 1);
    writer.write(log);
    if (on_step) on_step(log);
    logs.push_back(log);
  }
  return logs;
}

std::size_t init_student_from_teacher(const Detector& teacher, Detector& student) {
  return ad::copy_matching(teacher.params(), student.params()).size();
}

std::vector<StepLog> train_sdet(Detector& student, const Detector& teacher,
                                const std::vector<Sample>& data, const TrainConfig& cfg,
                                const StepCallback& on_step) {
  require_data(data, cfg);
  const auto& sa = student.arch();
  const auto& ta = teacher.arch();
  if (sa.grid.shape != ta.grid.shape || sa.bev_channels != ta.bev_channels ||
      sa.num_classes != ta.num_classes) {
    fail(ErrorCode::kShapeMismatch, "student and teacher grids or feature widths differ");
  }
  const Ablation& ab = cfg.ablation;
  if (ab.s2d != student.options().s2d || ab.pcr != student.options().pcr) {
    fail(ErrorCode::kInvalidConfig, "student modules do not match the ablation flags");
  }
  init_student_from_teacher(teacher, student);

  BatchOrder order(data.size(), cfg.seed);
  LogWriter writer(cfg.log_path);
  std::vector<StepLog> logs;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = prepare_batch(data, order.next(cfg.batch_size), cfg, step, sa, ab.pcr);
    const double lr = one_cycle_lr(cfg.schedule, step, cfg.steps);

    DetectorOutputs dense_out, object_out;
    if (ab.distill) {
      Tape frozen;
      frozen.set_grad_enabled(false);
      dense_out = teacher.forward(frozen, voxelize_batch(batch.samples, CloudKind::kDense, ta.grid), false);
      if (ab.s2d) {
        object_out = teacher.forward(
            frozen, voxelize_batch(batch.samples, CloudKind::kDenseObjects, ta.grid), false);
      }
    }

    student.params().zero_grad();
    StepLog log;
    {
      Tape tape;
      const auto out = student.forward(tape, voxelize_batch(batch.samples, CloudKind::kSparse, sa.grid), true);
      LossParts parts;
      detection_losses(out, batch.heads, cfg.loss, parts);
      if (ab.distill) {
        // Without the densification module the only feature pair is the head input.
        parts.s2d = ab.s2d ? l_s2d(out.f_a, dense_out.f_a, out.f_b, object_out.f_c, cfg.loss.beta,
                                   cfg.loss.gamma)
                           : feature_mimic(out.f_a, dense_out.f_a, cfg.loss.beta, cfg.loss.gamma);
        parts.hm_distill = hm_distill(out.heatmap, dense_out.heatmap, cfg.loss.distill_peak,
                                      cfg.loss.focal_alpha, cfg.loss.focal_beta);
      }
      if (ab.pcr) reconstruction_losses(out.pcr, batch.occupancy, parts);
      const Tensor total = total_sdet(parts, cfg.loss);
      log = make_log(step, lr, parts, total);
      check_loss(log, cfg, "sdet");
      tape.backward(total);
    }
    log.grad_norm = adamw_step(student.params(), cfg.optimizer, lr, step + 1);
    writer.write(log);
    if (on_step) on_step(log);
    logs.push_back(log);
  }
  return logs;
}

// --- evaluation ------------------------------------------------------------

ClassMetrics average_precision(const std::vector<SceneResult>& scenes, ObjectClass cls,
                               double iou_threshold) {
  struct Candidate {
    double score;
    std::size_t scene;
    const OrientedBox* box;
  };
  ClassMetrics m;
  std::vector<Candidate> cands;
  std::vector<std::vector<bool>> matched(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (const auto& g : scenes[s].ground_truth) m.n_gt += g.cls == cls;
    matched[s].assign(scenes[s].ground_truth.size(), false);
    for (const auto& d : scenes[s].detections) {
      if (d.box.cls == cls) cands.push_back({d.score, s, &d.box});
    }
  }
  m.n_det = cands.size();
  if (m.n_gt == 0) return m;
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  std::vector<double> precision, recall, precision_h;
  double tp = 0.0, tp_h = 0.0;
  for (std::size_t k = 0; k < cands.size(); ++k) {
    const auto& c = cands[k];
    const auto& gts = scenes[c.scene].ground_truth;
    double best = iou_threshold;
    std::optional<std::size_t> hit;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].cls != cls || matched[c.scene][g]) continue;
      const double iou = bev_iou(*c.box, gts[g]);
      if (iou >= best) {
        best = iou;
        hit = g;
      }
    }
    if (hit) {
      matched[c.scene][*hit] = true;
      tp += 1.0;
      tp_h += std::max(0.0, std::cos(c.box->yaw - gts[*hit].yaw));
    }
    const double n = static_cast<double>(k + 1);
    precision.push_back(tp / n);
    recall.push_back(tp / static_cast<double>(m.n_gt));
    precision_h.push_back(tp_h / n);
  }
  const auto area = [](const std::vector<double>& p, const std::vector<double>& r) {
    // Precision envelope from the right, sampled at 101 recall levels.
    std::vector<double> env(p);
    for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
    double sum = 0.0;
    std::size_t j = 0;
    for (int level = 0; level <= 100; ++level) {
      const double target = level / 100.0;
      while (j < r.size() && r[j] < target) ++j;
      if (j < r.size()) sum += env[j];
    }
    return sum / 101.0;
  };
  m.ap = area(precision, recall);
  m.aph = area(precision_h, recall);
  return m;
}

EvalReport evaluate(const Detector& student, const Detector* teacher, const std::vector<Sample>& data,
                    const EvalParams& params, std::size_t batch_size) {
  EvalReport report;
  report.scenes = data.size();
  std::vector<SceneResult> results;
  double sq = 0.0;
  std::size_t count = 0;
  const BevGrid bev = student.bev();
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::vector<Sample> batch(data.begin() + static_cast<std::ptrdiff_t>(start),
                                    data.begin() + static_cast<std::ptrdiff_t>(std::min(data.size(), start + batch_size)));
    Tape tape;
    tape.set_grad_enabled(false);
    const auto out = student.forward(tape, voxelize_batch(batch, CloudKind::kSparse, student.arch().grid), false);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      results.push_back({decode(out, i, bev, params.decode), batch[i].boxes});
    }
    if (teacher) {
      const auto ref = teacher->forward(tape, voxelize_batch(batch, CloudKind::kDense, teacher->arch().grid), false);
      const auto a = out.f_a.data();
      const auto b = ref.f_a.data();
      for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
      count += a.size();
    }
  }
  for (int c = 0; c < kNumClasses; ++c) {
    report.classes[static_cast<std::size_t>(c)] =
        average_precision(results, static_cast<ObjectClass>(c), params.iou_threshold[static_cast<std::size_t>(c)]);
  }
  report.feature_mse = count ? sq / static_cast<double>(count) : std::nan("");
  return report;
}

std::string to_json(const EvalReport& r) {
  json j;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.classes[static_cast<std::size_t>(c)];
    j["classes"][std::string(to_string(static_cast<ObjectClass>(c)))] = {
        {"ap", m.ap}, {"aph", m.aph}, {"n_gt", m.n_gt}, {"n_det", m.n_det}};
  }
  j["feature_mse"] = std::isfinite(r.feature_mse) ? json(r.feature_mse) : json(nullptr);
  j["scenes"] = r.scenes;
  return j.dump(2);
}

std::string to_table(const EvalReport& r) {
  std::ostringstream os;
  os << "class        AP      APH     GT    DET\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.classes[static_cast<std::size_t>(c)];
    char line[128];
    std::snprintf(line, sizeof line, "%-11s %6.4f  %6.4f  %5zu  %5zu\n",
                  std::string(to_string(static_cast<ObjectClass>(c))).c_str(), m.ap, m.aph, m.n_gt,
                  m.n_det);
    os << line;
  }
  char tail[96];
  std::snprintf(tail, sizeof tail, "feature MSE %.6g over %zu scenes\n", r.feature_mse, r.scenes);
  os << tail;
  return os.str();
}

// --- ablation --------------------------------------------------------------

AblationResult run_ablation(const AblationConfig& cfg, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  std::vector<AblationRow> rows;
  for (const auto& row : ablation_rows()) {
    if (cfg.rows.empty() || std::find(cfg.rows.begin(), cfg.rows.end(), row.label) != cfg.rows.end()) {
      rows.push_back(row);
    }
  }
  if (rows.empty()) fail(ErrorCode::kInvalidConfig, "no ablation rows selected");
  if (cfg.seeds.empty()) fail(ErrorCode::kInvalidConfig, "no seeds given");
  AblationResult result;
  result.seeds = cfg.seeds;
  for (const auto& r : rows) result.labels.push_back(r.label);
  result.reports.assign(rows.size(), {});
  for (const auto seed : cfg.seeds) {
    BenchmarkConfig bc = cfg.benchmark;
    bc.scene.seed = mix(cfg.benchmark.scene.seed, seed);
    const auto bench = make_benchmark(bc, cfg.workers);
    say("seed " + std::to_string(seed) + ": " + std::to_string(bench.train.size()) + " train / " +
        std::to_string(bench.eval.size()) + " eval scenes");
    Detector teacher(cfg.arch, {}, mix(seed, 1));
    TrainConfig tc = cfg.ddet;
    tc.seed = mix(seed, 2);
    tc.workers = cfg.workers;
    const auto tlog = train_ddet(teacher, bench.train, tc);
    say("seed " + std::to_string(seed) + ": teacher final loss " + std::to_string(tlog.back().total));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Detector student(cfg.arch, student_options(rows[r].flags), mix(seed, 3));
      TrainConfig sc = cfg.sdet;
      sc.seed = mix(seed, 4);
      sc.workers = cfg.workers;
      sc.ablation = rows[r].flags;
      const auto slog = train_sdet(student, teacher, bench.train, sc);
      auto report = evaluate(student, &teacher, bench.eval, cfg.eval);
      char line[160];
      std::snprintf(line, sizeof line, "seed %llu: %-15s loss %.4f  vehicle AP %.4f  feature MSE %.6f",
                    static_cast<unsigned long long>(seed), rows[r].label.c_str(), slog.back().total,
                    report.classes[0].ap, report.feature_mse);
      say(line);
      result.reports[r].push_back(report);
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::string ablation_markdown(const AblationResult& result) {
  std::ostringstream os;
  os << "| Method | Vehicle AP | Vehicle APH | Pedestrian AP | Cyclist AP | Feature MSE |\n"
     << "|---|---|---|---|---|---|\n";
  for (std::size_t r = 0; r < result.labels.size(); ++r) {
    double v = 0, vh = 0, p = 0, c = 0, f = 0;
    const auto& reps = result.reports[r];
    for (const auto& rep : reps) {
      v += rep.classes[0].ap;
      vh += rep.classes[0].aph;
      p += rep.classes[1].ap;
      c += rep.classes[2].ap;
      f += rep.feature_mse;
    }
    const double n = std::max<double>(1.0, static_cast<double>(reps.size()));
    char line[200];
    std::snprintf(line, sizeof line, "| %s | %.4f | %.4f | %.4f | %.4f | %.6f |\n",
                  result.labels[r].c_str(), v / n, vh / n, p / n, c / n, f / n);
    os << line;
  }
  return os.str();
}

}  // namespace densedet
