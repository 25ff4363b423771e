#include "densedet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "densedet/autodiff/checkpoint.hpp"
#include "densedet/config.hpp"
#include "densedet/error.hpp"
#include "densedet/module_checks.hpp"

namespace densedet {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kGradTolerance = 1e-4;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::vector<std::string> data_dirs;
  std::string bank;
  std::string stage;
  std::string ablation;
  std::string teacher;
  std::string ckpt;
  std::string log;
  std::string dump_dir;
  std::string json_out;
  std::string module;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> frames;
  std::optional<std::size_t> steps;
  int workers = 1;
};

struct App {
  std::unique_ptr<CLI::App> app;
  std::map<std::string, CLI::App*> subs;
};

App build_app(Options& o) {
  App a;
  a.app = std::make_unique<CLI::App>("Sparse-to-dense LiDAR detection toolkit", "densedet");
  a.app->require_subcommand(1);
  const auto sub = [&](const char* name, const char* help) {
    auto* s = a.app->add_subcommand(name, help);
    a.subs[name] = s;
    return s;
  };
  const auto config = [&](CLI::App* s) {
    s->add_option("--config", o.config, "TOML run configuration (defaults when omitted)")
        ->check(CLI::ExistingFile);
  };
  const auto workers = [&](CLI::App* s) {
    s->add_option("--workers", o.workers, "Worker threads for data preparation (1 = deterministic)")
        ->check(CLI::PositiveNumber);
  };

  auto* gen = sub("gen", "Generate a synthetic tracked sequence");
  config(gen);
  gen->add_option("--seed", o.seed, "Scene seed (overrides [scene] seed)");
  gen->add_option("--frames", o.frames, "Frame count (overrides [scene] n_frames)");
  gen->add_option("--out", o.out, "Output sequence directory")->required();

  auto* densify = sub("densify", "Build the dense object bank of a sequence");
  config(densify);
  densify->add_option("--data,--seq", o.data, "Sequence directory written by gen")->required();
  densify->add_option("--out", o.out, "Output bank directory")->required();
  workers(densify);

  auto* compose = sub("compose", "Compose dense scenes from a sequence and its bank");
  compose->add_option("--data,--seq", o.data, "Sequence directory written by gen")->required();
  compose->add_option("--bank", o.bank, "Bank directory written by densify")->required();
  compose->add_option("--out", o.out, "Output scene directory")->required();

  auto* targets = sub("targets", "Occupancy targets of composed scenes");
  config(targets);
  targets->add_option("--data", o.data, "Scene directory written by compose")->required();
  targets->add_option("--out", o.out, "Output target directory")->required();

  auto* train = sub("train", "Train the teacher (ddet) or the student (sdet)");
  config(train);
  train->add_option("--stage", o.stage, "ddet or sdet")
      ->required()
      ->check(CLI::IsMember({"ddet", "sdet"}));
  train->add_option("--ablation", o.ablation, "Student switches: comma list of +distill,+s2d,+pcr");
  train->add_option("--teacher", o.teacher, "Teacher checkpoint stem (required for sdet)");
  train->add_option("--data", o.data_dirs,
                    "Sequence directories to train on (default: the configured benchmark)");
  train->add_option("--out", o.out, "Output checkpoint stem")->required();
  train->add_option("--log", o.log, "JSON-lines loss log");
  train->add_option("--steps", o.steps, "Training steps (overrides the stage's steps)");
  train->add_option("--seed", o.seed, "Training seed (overrides the stage's seed)");
  train->add_option("--dump-dir", o.dump_dir, "Directory for the diagnostic dump on a NaN loss");
  workers(train);

  auto* eval = sub("eval", "Evaluate a checkpoint on held-out scenes");
  config(eval);
  eval->add_option("--ckpt", o.ckpt, "Checkpoint stem to evaluate")->required();
  eval->add_option("--teacher", o.teacher, "Teacher checkpoint stem for the feature gap");
  eval->add_option("--data", o.data_dirs,
                   "Sequence directories to evaluate on (default: the configured benchmark)");
  eval->add_option("--json", o.json_out, "Also write the JSON report here");
  workers(eval);

  auto* grad = sub("gradcheck", "Finite-difference gradient check of one module");
  grad->add_option("--module", o.module, "Module name")
      ->required()
      ->check(CLI::IsMember(checkable_modules()));
  grad->add_option("--seed", o.seed, "Seed of the random instance");

  auto* ablation = sub("ablation", "Run the ablation matrix and print a markdown table");
  ablation->alias("report");
  config(ablation);
  ablation->add_option("--seeds", o.seeds, "Seeds (overrides [ablation] seeds)");
  ablation->add_option("--out", o.out, "Also write the markdown table here");
  ablation->add_option("--json", o.json_out, "Also write every report as JSON here");
  workers(ablation);
  return a;
}

AblationConfig config_of(const Options& o) {
  return o.config.empty() ? AblationConfig{} : load_config(o.config);
}

void write_meta(const std::string& stem, const std::string& stage, const Ablation& ab) {
  const json meta{{"stage", stage},
                  {"ablation", {{"distill", ab.distill}, {"s2d", ab.s2d}, {"pcr", ab.pcr}}}};
  write_text(stem + ".meta.json", meta.dump(2) + "\n");
}

struct Meta {
  std::string stage;
  Ablation ablation;
};

Meta read_meta(const std::string& stem) {
  try {
    const auto j = json::parse(read_text(stem + ".meta.json"));
    Meta m;
    m.stage = j.at("stage").get<std::string>();
    const auto& a = j.at("ablation");
    m.ablation = {a.at("distill").get<bool>(), a.at("s2d").get<bool>(), a.at("pcr").get<bool>()};
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, stem + ".meta.json: " + e.what());
  }
}

std::unique_ptr<Detector> load_detector(const std::string& stem, const ArchConfig& arch,
                                        const std::string& want_stage = "") {
  const auto meta = read_meta(stem);
  if (!want_stage.empty() && meta.stage != want_stage) {
    fail(ErrorCode::kInvalidConfig, stem + " is a " + meta.stage + " checkpoint, need " + want_stage);
  }
  auto det = std::make_unique<Detector>(arch, student_options(meta.ablation), 0);
  ad::load_checkpoint(det->params(), stem, true);
  return det;
}

std::vector<Sample> samples_from(const std::vector<std::string>& dirs, const AblationConfig& c,
                                 bool train_split, int workers) {
  if (dirs.empty()) {
    const auto bench = make_benchmark(c.benchmark, workers);
    return train_split ? bench.train : bench.eval;
  }
  std::vector<Sample> out;
  for (const auto& d : dirs) {
    auto s = make_samples(load_sequence(d), c.benchmark.dense, workers);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

int cmd_gen(const Options& o, std::ostream& out) {
  auto c = config_of(o);
  auto scene = c.benchmark.scene;
  if (o.seed) scene.seed = *o.seed;
  if (o.frames) scene.n_frames = *o.frames;
  const auto seq = generate_sequence(scene);
  save_sequence(seq, o.out);
  std::size_t points = 0;
  for (const auto& f : seq.frames) points += f.points.size();
  out << "wrote " << seq.frames.size() << " frames, " << points << " points to " << o.out << "\n";
  return 0;
}

int cmd_densify(const Options& o, std::ostream& out) {
  const auto c = config_of(o);
  const auto bank = build_dense_bank(load_sequence(o.data), c.benchmark.dense, o.workers);
  save_bank(bank, o.out);
  out << "wrote " << bank.size() << " dense objects to " << o.out << "\n";
  return 0;
}

int cmd_compose(const Options& o, std::ostream& out) {
  const auto seq = load_sequence(o.data);
  const auto bank = load_bank(o.bank);
  fs::create_directories(fs::path(o.out) / "scenes");
  json index;
  index["frames"] = json::array();
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto scene = compose_dense_scene(seq.frames[t], bank, t);
    const std::string stem = "scenes/" + frame_stem(t);
    write_cloud((fs::path(o.out) / (stem + "_dense.bin")).string(), scene.dense_cloud);
    write_cloud((fs::path(o.out) / (stem + "_objects.bin")).string(), scene.object_only_cloud);
    index["frames"].push_back({{"dense", stem + "_dense.bin"},
                               {"objects", stem + "_objects.bin"},
                               {"background_count", scene.background_count},
                               {"boxes", json::parse(boxes_to_json(seq.frames[t].boxes))}});
  }
  write_text((fs::path(o.out) / "scenes.json").string(), index.dump(2) + "\n");
  out << "wrote " << seq.frames.size() << " composed scenes to " << o.out << "\n";
  return 0;
}

int cmd_targets(const Options& o, std::ostream& out) {
  const auto c = config_of(o);
  json index;
  try {
    index = json::parse(read_text((fs::path(o.data) / "scenes.json").string()));
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, o.data + "/scenes.json: " + e.what());
  }
  fs::create_directories(o.out);
  std::size_t n = 0;
  for (const auto& f : index.at("frames")) {
    const auto objects = read_cloud((fs::path(o.data) / f.at("objects").get<std::string>()).string());
    save_targets(build_targets(objects, c.arch.grid), (fs::path(o.out) / frame_stem(n)).string());
    ++n;
  }
  out << "wrote targets for " << n << " scenes to " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto c = config_of(o);
  const bool sdet = o.stage == "sdet";
  TrainConfig tc = sdet ? c.sdet : c.ddet;
  if (o.steps) tc.steps = *o.steps;
  if (o.seed) tc.seed = *o.seed;
  tc.workers = o.workers;
  tc.log_path = o.log;
  tc.dump_dir = o.dump_dir;
  tc.ablation = parse_ablation(o.ablation);
  if (!sdet && !o.ablation.empty()) fail(ErrorCode::kUsage, "--ablation applies to --stage sdet only");
  if (sdet && o.teacher.empty()) fail(ErrorCode::kUsage, "--stage sdet requires --teacher");
  const auto data = samples_from(o.data_dirs, c, true, o.workers);
  const auto progress = [&](const StepLog& l) {
    if (l.step % 20 == 0 || l.step + 1 == tc.steps) {
      char line[128];
      std::snprintf(line, sizeof line, "step %zu lr %.6f loss %.5f\n", l.step, l.lr, l.total);
      err << line;
    }
  };
  std::vector<StepLog> logs;
  std::unique_ptr<Detector> net;
  if (sdet) {
    const auto teacher = load_detector(o.teacher, c.arch, "ddet");
    net = std::make_unique<Detector>(c.arch, student_options(tc.ablation), tc.seed);
    logs = train_sdet(*net, *teacher, data, tc, progress);
  } else {
    net = std::make_unique<Detector>(c.arch, NetworkOptions{}, tc.seed);
    logs = train_ddet(*net, data, tc, progress);
  }
  ad::save_checkpoint(net->params(), o.out);
  write_meta(o.out, o.stage, tc.ablation);
  out << "trained " << o.stage << " for " << logs.size() << " steps on " << data.size()
      << " scenes; final loss " << logs.back().total << "; checkpoint " << o.out << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto c = config_of(o);
  const auto student = load_detector(o.ckpt, c.arch);
  std::unique_ptr<Detector> teacher;
  if (!o.teacher.empty()) teacher = load_detector(o.teacher, c.arch, "ddet");
  const auto data = samples_from(o.data_dirs, c, false, o.workers);
  if (data.empty()) fail(ErrorCode::kEmptyInput, "no evaluation scenes");
  const auto report = evaluate(*student, teacher.get(), data, c.eval);
  const auto text = to_json(report);
  if (!o.json_out.empty()) write_text(o.json_out, text + "\n");
  out << text << "\n" << to_table(report);
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const auto r = check_module_gradients(o.module, o.seed.value_or(0));
  char line[256];
  std::snprintf(line, sizeof line,
                "module=%s max_rel_error=%.3e worst=%s[%zu] coords=%zu tolerance=%.0e %s\n",
                o.module.c_str(), r.max_rel_error, r.worst_variable.c_str(), r.worst_index,
                r.coords_checked, kGradTolerance, r.max_rel_error < kGradTolerance ? "ok" : "FAIL");
  out << line;
  return r.max_rel_error < kGradTolerance ? 0 : 3;
}

int cmd_ablation(const Options& o, std::ostream& out, std::ostream& err) {
  auto c = config_of(o);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  c.workers = o.workers;
  const auto result = run_ablation(c, [&](const std::string& s) { err << s << "\n" << std::flush; });
  const auto table = ablation_markdown(result);
  if (!o.out.empty()) write_text(o.out, table);
  if (!o.json_out.empty()) {
    json j;
    j["seeds"] = result.seeds;
    j["seconds"] = result.seconds;
    for (std::size_t r = 0; r < result.labels.size(); ++r) {
      json row{{"label", result.labels[r]}, {"reports", json::array()}};
      for (const auto& rep : result.reports[r]) row["reports"].push_back(json::parse(to_json(rep)));
      j["rows"].push_back(row);
    }
    write_text(o.json_out, j.dump(2) + "\n");
  }
  out << table;
  char line[64];
  std::snprintf(line, sizeof line, "\n%.1f s\n", result.seconds);
  err << line;
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

void report(std::ostream& err, std::string_view code, int exit, const std::string& message) {
  err << "error: code=" << code << " exit=" << exit << " message=" << one_line(message) << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  App a = build_app(o);
  std::vector<std::string> storage = args.empty() ? std::vector<std::string>{"densedet"} : args;
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    a.app->parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // Help requests are parse "errors" with exit code 0; help() follows the
    // selected subcommand.
    if (e.get_exit_code() == 0) {
      out << a.app->help();
      return 0;
    }
    report(err, "usage", 1, e.what());
    return 1;
  }
  try {
    const auto& subs = a.subs;
    if (subs.at("gen")->parsed()) return cmd_gen(o, out);
    if (subs.at("densify")->parsed()) return cmd_densify(o, out);
    if (subs.at("compose")->parsed()) return cmd_compose(o, out);
    if (subs.at("targets")->parsed()) return cmd_targets(o, out);
    if (subs.at("train")->parsed()) return cmd_train(o, out, err);
    if (subs.at("eval")->parsed()) return cmd_eval(o, out);
    if (subs.at("gradcheck")->parsed()) return cmd_gradcheck(o, out);
    if (subs.at("ablation")->parsed()) return cmd_ablation(o, out, err);
    report(err, "usage", 1, "no subcommand");
    return 1;
  } catch (const Error& e) {
    const int exit = static_cast<int>(classify(e.code()));
    report(err, to_string(e.code()), exit, e.what());
    return exit;
  } catch (const std::exception& e) {
    report(err, "io_error", 2, e.what());
    return 2;
  }
}

std::string cli_help(const std::string& subcommand) {
  Options o;
  App a = build_app(o);
  if (subcommand.empty()) return a.app->help();
  a.subs.at(subcommand);
  // Render through a parse so the usage line carries the program name.
  std::ostringstream out, err;
  run_cli({"densedet", subcommand, "--help"}, out, err);
  return out.str();
}

std::vector<std::string> cli_flags(const std::string& subcommand) {
  Options o;
  App a = build_app(o);
  std::vector<std::string> flags;
  for (const auto* opt : a.subs.at(subcommand)->get_options()) {
    for (const auto& n : opt->get_lnames()) flags.push_back(n);
  }
  return flags;
}

std::vector<std::string> cli_subcommands() {
  Options o;
  App a = build_app(o);
  std::vector<std::string> names;
  for (const auto& [name, sub] : a.subs) names.push_back(name);
  return names;
}

}  // namespace densedet
