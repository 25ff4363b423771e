#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "densedet/dense_gen.hpp"
#include "densedet/detector.hpp"
#include "densedet/losses.hpp"
#include "densedet/recon_targets.hpp"
#include "densedet/synth_lidar.hpp"

namespace densedet {

// --- data ------------------------------------------------------------------

/// One training scene: raw cloud, composed dense cloud, dense objects alone,
/// and the boxes they share.
struct Sample {
  PointCloud sparse;
  PointCloud dense;
  PointCloud dense_objects;
  std::vector<OrientedBox> boxes;
};

/// Dense bank per sequence, then one sample per frame.
std::vector<Sample> make_samples(const TrackedSequence& seq, const DenseGenParams& dense = {},
                                 int workers = 1);

struct BenchmarkConfig {
  SceneConfig scene;
  std::size_t train_sequences = 2;
  std::size_t eval_sequences = 1;
  DenseGenParams dense;
};

struct Benchmark {
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

/// Sequence seeds are derived from `scene.seed`; train and eval sequences
/// never share a seed.
Benchmark make_benchmark(const BenchmarkConfig& cfg, int workers = 1);

// --- augmentation ----------------------------------------------------------

/// Global transform applied as: mirror y (optional), rotate about z, scale
/// about the origin, translate.
struct GlobalTransform {
  bool flip_y = false;
  double rotation = 0.0;
  double scale = 1.0;
  Vec3 translation;
};

struct AugmentRanges {
  double max_rotation = 0.7853981633974483;  // pi / 4
  double min_scale = 0.95;
  double max_scale = 1.05;
  double max_translation = 0.2;
  double flip_probability = 0.5;
};

GlobalTransform sample_transform(std::uint64_t seed, const AugmentRanges& ranges = {});
Point3 apply(const GlobalTransform& t, const Point3& p);
OrientedBox apply(const GlobalTransform& t, const OrientedBox& b);
/// The same transform on every cloud and box of the sample.
Sample apply(const GlobalTransform& t, const Sample& s);
Sample augment_scene(const Sample& s, std::uint64_t seed, const AugmentRanges& ranges = {});

// --- schedule and optimizer -------------------------------------------------

struct OneCycle {
  double max_lr = 0.003;
  /// Start at max_lr * div_factor.
  double div_factor = 0.1;
  /// Fraction of the steps spent rising.
  double pct_start = 0.3;
  /// The final value is the start value times this.
  double final_factor = 1e-4;
};

/// Cosine rise from max_lr * div_factor at step 0 to max_lr at
/// round(pct_start * total), then cosine decay to the start value times
/// final_factor at step total - 1.
double one_cycle_lr(const OneCycle& s, std::size_t step, std::size_t total);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 10.0;
};

/// One decoupled-weight-decay Adam step over every trainable parameter;
/// `step` counts from 1. Returns the pre-clip global gradient norm.
double adamw_step(ad::ParamStore& store, const AdamWConfig& cfg, double lr, std::size_t step);

// --- training --------------------------------------------------------------

/// Switches of the student objective.
struct Ablation {
  bool distill = false;
  bool s2d = false;
  bool pcr = false;
};

/// Row labels and switches of the ablation table, in order.
struct AblationRow {
  std::string label;
  Ablation flags;
};
const std::vector<AblationRow>& ablation_rows();
/// Parses a comma list of "+distill", "+s2d", "+pcr" (empty means baseline).
Ablation parse_ablation(const std::string& text);

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentRanges augment_ranges;
  OneCycle schedule;
  AdamWConfig optimizer;
  LossWeights loss;
  Ablation ablation;
  /// Threads for batch preparation; 1 is bit-deterministic, and so is any
  /// other count (samples are prepared independently).
  int workers = 1;
  /// JSON-lines loss log; empty disables.
  std::string log_path;
  /// Directory for the diagnostic dump written before a nan_loss abort.
  std::string dump_dir;
};

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double hm = 0.0;
  double reg = 0.0;
  double s2d = 0.0;
  double mask = 0.0;
  double offset = 0.0;
  double hm_distill = 0.0;
  double total = 0.0;
};

std::string to_json(const StepLog& log);

using StepCallback = std::function<void(const StepLog&)>;

/// Trains the teacher on the dense clouds with the hm + reg objective.
/// Throws kNanLoss (after writing the dump) on a non-finite loss.
std::vector<StepLog> train_ddet(Detector& teacher, const std::vector<Sample>& data,
                                const TrainConfig& cfg, const StepCallback& on_step = {});

/// Student network for an ablation row.
NetworkOptions student_options(const Ablation& a);

/// Copies every shape-matching parameter of the teacher into the student.
/// Returns the number of arrays copied.
std::size_t init_student_from_teacher(const Detector& teacher, Detector& student);

/// Trains the student on the raw clouds against the frozen teacher. The
/// teacher runs in inference mode without gradient; its parameters are never
/// written. Throws kShapeMismatch when the architectures differ and kNanLoss
/// on a non-finite loss.
std::vector<StepLog> train_sdet(Detector& student, const Detector& teacher,
                                const std::vector<Sample>& data, const TrainConfig& cfg,
                                const StepCallback& on_step = {});

// --- evaluation ------------------------------------------------------------

struct ClassMetrics {
  double ap = 0.0;
  double aph = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
};

struct EvalReport {
  std::array<ClassMetrics, kNumClasses> classes{};
  /// Mean squared difference of the student and teacher head-input features
  /// over all elements of the held-out scenes; NaN without a teacher.
  double feature_mse = 0.0;
  std::size_t scenes = 0;
};

struct EvalParams {
  std::array<double, kNumClasses> iou_threshold{0.5, 0.25, 0.25};
  DecodeParams decode{0.05, 100};
};

/// Detections of one scene paired with its ground truth.
struct SceneResult {
  std::vector<Detection> detections;
  std::vector<OrientedBox> ground_truth;
};

/// Greedy matching by descending score at the class IoU threshold, then the
/// 101-point interpolated area under the precision/recall curve. APH counts
/// each true positive as max(0, cos(yaw error)) in the precision while the
/// recall keeps unit credit. No ground truth gives 0.
ClassMetrics average_precision(const std::vector<SceneResult>& scenes, ObjectClass cls,
                               double iou_threshold);

/// Student on the raw clouds; teacher (optional) on the dense clouds for the
/// feature gap. Inference mode, batched by `batch_size`.
EvalReport evaluate(const Detector& student, const Detector* teacher,
                    const std::vector<Sample>& data, const EvalParams& params = {},
                    std::size_t batch_size = 4);

std::string to_json(const EvalReport& report);
std::string to_table(const EvalReport& report);

// --- ablation --------------------------------------------------------------

struct AblationConfig {
  ArchConfig arch;
  BenchmarkConfig benchmark;
  TrainConfig ddet;
  TrainConfig sdet;
  EvalParams eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Subset of ablation_rows() labels; empty runs all rows.
  std::vector<std::string> rows;
  int workers = 1;
};

struct AblationResult {
  std::vector<std::string> labels;
  /// [row][seed]
  std::vector<std::vector<EvalReport>> reports;
  std::vector<std::uint64_t> seeds;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Per seed: build the benchmark, train one teacher, then one student per
/// row, evaluating each student on the held-out scenes.
AblationResult run_ablation(const AblationConfig& cfg, const ProgressFn& progress = {});

/// Markdown table: one line per row with mean vehicle AP / APH, pedestrian
/// and cyclist AP, and feature MSE over seeds.
std::string ablation_markdown(const AblationResult& result);

}  // namespace densedet
