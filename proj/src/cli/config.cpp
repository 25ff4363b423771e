#include "densedet/config.hpp"

#include <concepts>
#include <cstdio>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "densedet/error.hpp"

namespace densedet {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  fail(ErrorCode::kInvalidConfig, "config key '" + key + "': " + why);
}

// Reads keys of one table and remembers them so leftovers can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  void get(const char* key, double& out) {
    if (const auto* n = find(key)) {
      const auto v = n->value<double>();
      if (!v) bad(path(key), "expected a number");
      out = *v;
    }
  }
  void get(const char* key, bool& out) {
    if (const auto* n = find(key)) {
      if (!n->is_boolean()) bad(path(key), "expected true or false");
      out = n->as_boolean()->get();
    }
  }
  template <std::integral T>
  void get(const char* key, T& out) {
    out = static_cast<T>(integer(key, static_cast<std::int64_t>(out)));
  }
  void get(const char* key, Vec3& out) {
    if (const auto* n = find(key)) {
      const auto v = numbers(key, *n, 3);
      out = {v[0], v[1], v[2]};
    }
  }
  template <typename T, std::size_t N>
  void get(const char* key, std::array<T, N>& out) {
    if (const auto* n = find(key)) {
      const auto v = numbers(key, *n, N);
      for (std::size_t i = 0; i < N; ++i) {
        if constexpr (std::is_integral_v<T>) {
          if (v[i] < 0 || v[i] != static_cast<double>(static_cast<std::int64_t>(v[i])))
            bad(path(key), "expected non-negative integers");
          out[i] = static_cast<T>(v[i]);
        } else {
          out[i] = v[i];
        }
      }
    }
  }
  void get(const char* key, std::vector<std::uint64_t>& out) {
    if (const auto* n = find(key)) {
      const auto* arr = n->as_array();
      if (!arr) bad(path(key), "expected an array of integers");
      out.clear();
      for (const auto& e : *arr) {
        const auto v = e.value<std::int64_t>();
        if (!e.is_integer() || !v || *v < 0) bad(path(key), "expected non-negative integers");
        out.push_back(static_cast<std::uint64_t>(*v));
      }
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const auto* n = find(key)) {
      const auto* arr = n->as_array();
      if (!arr) bad(path(key), "expected an array of strings");
      out.clear();
      for (const auto& e : *arr) {
        if (!e.is_string()) bad(path(key), "expected strings");
        out.push_back(e.as_string()->get());
      }
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.count(std::string(k.str()))) bad(path(std::string(k.str()).c_str()), "unknown key");
    }
  }

 private:
  const toml::node* find(const char* key) {
    seen_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }
  std::string path(const char* key) const { return name_.empty() ? key : name_ + "." + key; }

  std::int64_t integer(const char* key, std::int64_t fallback) {
    const auto* n = find(key);
    if (!n) return fallback;
    if (!n->is_integer()) bad(path(key), "expected an integer");
    const auto v = n->as_integer()->get();
    if (v < 0) bad(path(key), "must be >= 0");
    return v;
  }

  std::vector<double> numbers(const char* key, const toml::node& n, std::size_t count) {
    const auto* arr = n.as_array();
    if (!arr || arr->size() != count) bad(path(key), "expected an array of " + std::to_string(count) + " numbers");
    std::vector<double> out;
    for (const auto& e : *arr) {
      const auto v = e.value<double>();
      if (!v) bad(path(key), "expected numbers");
      out.push_back(*v);
    }
    return out;
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

const toml::table* subtable(const toml::table& root, const char* name) {
  const auto* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) bad(name, "expected a table");
  return n->as_table();
}

void read_train(Section& s, TrainConfig& t) {
  s.get("steps", t.steps);
  s.get("batch_size", t.batch_size);
  s.get("seed", t.seed);
  s.get("augment", t.augment);
  s.get("max_rotation", t.augment_ranges.max_rotation);
  s.get("min_scale", t.augment_ranges.min_scale);
  s.get("max_scale", t.augment_ranges.max_scale);
  s.get("max_translation", t.augment_ranges.max_translation);
  s.get("flip_probability", t.augment_ranges.flip_probability);
  s.get("max_lr", t.schedule.max_lr);
  s.get("div_factor", t.schedule.div_factor);
  s.get("pct_start", t.schedule.pct_start);
  s.get("final_factor", t.schedule.final_factor);
  s.get("beta1", t.optimizer.beta1);
  s.get("beta2", t.optimizer.beta2);
  s.get("eps", t.optimizer.eps);
  s.get("weight_decay", t.optimizer.weight_decay);
  s.get("grad_clip", t.optimizer.grad_clip);
  s.finish();
  if (t.batch_size == 0) bad(std::string("batch_size"), "must be positive");
}

void check_row_labels(const std::vector<std::string>& rows) {
  for (const auto& r : rows) {
    bool known = false;
    for (const auto& row : ablation_rows()) known = known || row.label == r;
    if (!known) bad("ablation.rows", "unknown row '" + r + "'");
  }
}

}  // namespace

AblationConfig parse_config(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
       << e.description();
    fail(ErrorCode::kInvalidConfig, os.str());
  }
  AblationConfig c;
  static const std::set<std::string> tables{"scene", "benchmark", "dense", "grid", "arch", "loss",
                                            "ddet",  "sdet",      "eval",  "ablation"};
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key == "workers") continue;
    if (!tables.count(key)) bad(key, "unknown key");
  }
  Section top(&root, "");
  top.get("workers", c.workers);
  if (c.workers < 1) bad("workers", "must be >= 1");

  Section scene(subtable(root, "scene"), "scene");
  auto& sc = c.benchmark.scene;
  scene.get("seed", sc.seed);
  scene.get("n_frames", sc.n_frames);
  scene.get("n_objects", sc.n_objects);
  scene.get("extent", sc.extent);
  scene.get("min_range", sc.min_range);
  scene.get("sensor", sc.sensor);
  scene.get("density", sc.density);
  scene.get("dropout", sc.dropout);
  scene.get("clutter_density", sc.clutter_density);
  scene.get("max_speed", sc.max_speed);
  scene.get("min_yaw_rate", sc.min_yaw_rate);
  scene.get("max_yaw_rate", sc.max_yaw_rate);
  scene.finish();

  Section bench(subtable(root, "benchmark"), "benchmark");
  bench.get("train_sequences", c.benchmark.train_sequences);
  bench.get("eval_sequences", c.benchmark.eval_sequences);
  bench.finish();

  Section dense(subtable(root, "dense"), "dense");
  auto& dg = c.benchmark.dense;
  dense.get("outlier_radius", dg.outliers.radius);
  dense.get("outlier_min_neighbors", dg.outliers.min_neighbors);
  dense.get("voxel_capacity", dg.fill.voxel_capacity);
  dense.get("stop_ratio", dg.fill.stop_ratio);
  dense.get("symmetry_min_points", dg.symmetry.min_points);
  dense.get("cell", dg.cell);
  dense.finish();

  Section grid(subtable(root, "grid"), "grid");
  grid.get("origin", c.arch.grid.origin);
  grid.get("cell", c.arch.grid.cell);
  grid.get("shape", c.arch.grid.shape);
  grid.finish();

  Section arch(subtable(root, "arch"), "arch");
  arch.get("encoder_hidden", c.arch.encoder_hidden);
  arch.get("encoder_channels", c.arch.encoder_channels);
  arch.get("stage1_channels", c.arch.stage1_channels);
  arch.get("stage2_channels", c.arch.stage2_channels);
  arch.get("bev_channels", c.arch.bev_channels);
  arch.get("head_channels", c.arch.head_channels);
  arch.get("s2d_channels", c.arch.s2d_channels);
  arch.get("pcr_channels", c.arch.pcr_channels);
  arch.finish();

  Section loss(subtable(root, "loss"), "loss");
  LossWeights w;
  loss.get("beta", w.beta);
  loss.get("gamma", w.gamma);
  loss.get("hm", w.hm);
  loss.get("reg", w.reg);
  loss.get("s2d", w.s2d);
  loss.get("mask", w.mask);
  loss.get("offset", w.offset);
  loss.get("hm_distill", w.hm_distill);
  loss.get("distill_peak", w.distill_peak);
  loss.get("focal_alpha", w.focal_alpha);
  loss.get("focal_beta", w.focal_beta);
  loss.finish();
  c.ddet.loss = c.sdet.loss = w;

  Section ddet(subtable(root, "ddet"), "ddet");
  read_train(ddet, c.ddet);
  Section sdet(subtable(root, "sdet"), "sdet");
  read_train(sdet, c.sdet);

  Section ev(subtable(root, "eval"), "eval");
  ev.get("iou", c.eval.iou_threshold);
  ev.get("score_threshold", c.eval.decode.score_threshold);
  ev.get("max_detections", c.eval.decode.max_detections);
  ev.finish();

  Section ab(subtable(root, "ablation"), "ablation");
  ab.get("seeds", c.seeds);
  ab.get("rows", c.rows);
  ab.finish();
  check_row_labels(c.rows);

  c.ddet.workers = c.sdet.workers = c.workers;
  validate(c.arch);
  validate(c.benchmark.scene);
  validate(w);
  return c;
}

AblationConfig load_config(const std::string& path) {
  return parse_config(read_text(path), path);
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string vec(const Vec3& v) { return "[" + num(v.x) + ", " + num(v.y) + ", " + num(v.z) + "]"; }

void write_train(std::ostream& os, const char* name, const TrainConfig& t) {
  os << "\n[" << name << "]\n"
     << "steps = " << t.steps << "\nbatch_size = " << t.batch_size << "\nseed = " << t.seed
     << "\naugment = " << (t.augment ? "true" : "false")
     << "\nmax_rotation = " << num(t.augment_ranges.max_rotation)
     << "\nmin_scale = " << num(t.augment_ranges.min_scale)
     << "\nmax_scale = " << num(t.augment_ranges.max_scale)
     << "\nmax_translation = " << num(t.augment_ranges.max_translation)
     << "\nflip_probability = " << num(t.augment_ranges.flip_probability)
     << "\nmax_lr = " << num(t.schedule.max_lr) << "\ndiv_factor = " << num(t.schedule.div_factor)
     << "\npct_start = " << num(t.schedule.pct_start)
     << "\nfinal_factor = " << num(t.schedule.final_factor)
     << "\nbeta1 = " << num(t.optimizer.beta1) << "\nbeta2 = " << num(t.optimizer.beta2)
     << "\neps = " << num(t.optimizer.eps) << "\nweight_decay = " << num(t.optimizer.weight_decay)
     << "\ngrad_clip = " << num(t.optimizer.grad_clip) << "\n";
}

}  // namespace

std::string config_to_toml(const AblationConfig& c) {
  std::ostringstream os;
  const auto& s = c.benchmark.scene;
  const auto& d = c.benchmark.dense;
  const auto& a = c.arch;
  const auto& w = c.ddet.loss;
  os << "workers = " << c.workers << "\n"
     << "\n[scene]\nseed = " << s.seed << "\nn_frames = " << s.n_frames << "\nn_objects = ["
     << s.n_objects[0] << ", " << s.n_objects[1] << ", " << s.n_objects[2] << "]"
     << "\nextent = " << num(s.extent) << "\nmin_range = " << num(s.min_range)
     << "\nsensor = " << vec(s.sensor) << "\ndensity = " << num(s.density)
     << "\ndropout = " << num(s.dropout) << "\nclutter_density = " << num(s.clutter_density)
     << "\nmax_speed = " << num(s.max_speed) << "\nmin_yaw_rate = " << num(s.min_yaw_rate)
     << "\nmax_yaw_rate = " << num(s.max_yaw_rate) << "\n"
     << "\n[benchmark]\ntrain_sequences = " << c.benchmark.train_sequences
     << "\neval_sequences = " << c.benchmark.eval_sequences << "\n"
     << "\n[dense]\noutlier_radius = " << num(d.outliers.radius)
     << "\noutlier_min_neighbors = " << d.outliers.min_neighbors
     << "\nvoxel_capacity = " << d.fill.voxel_capacity << "\nstop_ratio = " << num(d.fill.stop_ratio)
     << "\nsymmetry_min_points = " << d.symmetry.min_points << "\ncell = " << vec(d.cell) << "\n"
     << "\n[grid]\norigin = " << vec(a.grid.origin) << "\ncell = " << vec(a.grid.cell)
     << "\nshape = [" << a.grid.shape[0] << ", " << a.grid.shape[1] << ", " << a.grid.shape[2] << "]\n"
     << "\n[arch]\nencoder_hidden = " << a.encoder_hidden << "\nencoder_channels = " << a.encoder_channels
     << "\nstage1_channels = " << a.stage1_channels << "\nstage2_channels = " << a.stage2_channels
     << "\nbev_channels = " << a.bev_channels << "\nhead_channels = " << a.head_channels
     << "\ns2d_channels = " << a.s2d_channels << "\npcr_channels = " << a.pcr_channels << "\n"
     << "\n[loss]\nbeta = " << num(w.beta) << "\ngamma = " << num(w.gamma) << "\nhm = " << num(w.hm)
     << "\nreg = " << num(w.reg) << "\ns2d = " << num(w.s2d) << "\nmask = " << num(w.mask)
     << "\noffset = " << num(w.offset) << "\nhm_distill = " << num(w.hm_distill)
     << "\ndistill_peak = " << num(w.distill_peak) << "\nfocal_alpha = " << num(w.focal_alpha)
     << "\nfocal_beta = " << num(w.focal_beta) << "\n";
  write_train(os, "ddet", c.ddet);
  write_train(os, "sdet", c.sdet);
  os << "\n[eval]\niou = [" << num(c.eval.iou_threshold[0]) << ", " << num(c.eval.iou_threshold[1])
     << ", " << num(c.eval.iou_threshold[2]) << "]\nscore_threshold = "
     << num(c.eval.decode.score_threshold) << "\nmax_detections = " << c.eval.decode.max_detections
     << "\n\n[ablation]\nseeds = [";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? ", " : "") << c.seeds[i];
  os << "]\nrows = [";
  for (std::size_t i = 0; i < c.rows.size(); ++i) os << (i ? ", " : "") << '"' << c.rows[i] << '"';
  os << "]\n";
  return os.str();
}

}  // namespace densedet
