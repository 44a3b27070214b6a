#include "skd/harness.hpp"

#include "skd/checkpoint.hpp"
#include "skd/errors.hpp"
#include "skd/eval.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace skd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void say(const RunOptions& options, const std::string& message) {
  if (options.log) options.log(message);
}

void write_json(const fs::path& path, const json& j) {
  auto tmp = path;
  tmp += ".tmp";
  std::ofstream(tmp, std::ios::trunc) << j.dump(2) << '\n';
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

void check_teacher_fits(const StagedNetwork& teacher, const ExperimentConfig& config, const std::string& origin) {
  if (teacher->kind() != config.dataset.task || teacher->num_classes() != config.dataset.num_classes() ||
      teacher->variant() != config.teacher.variant) {
    throw ConfigError("teacher from " + origin + " is " + teacher->model_name() + " with " +
                      std::to_string(teacher->num_classes()) + " classes; config expects ResNet" +
                      std::to_string(config.teacher.variant) + " with " +
                      std::to_string(config.dataset.num_classes()) + " classes");
  }
}

AugmentParams augment_for(const ExperimentConfig& config) {
  AugmentParams p;
  p.resolution = config.dataset.resolution;
  p.pad = std::max<int64_t>(1, config.dataset.resolution / 8);
  return p;
}

}  // namespace

StagedNetwork obtain_teacher(const ExperimentConfig& config, RecordStore& store, const RunOptions& options) {
  if (config.teacher.checkpoint) {
    auto loaded = load_checkpoint(*config.teacher.checkpoint);
    check_teacher_fits(loaded.net, config, config.teacher.checkpoint->string());
    loaded.net->freeze_all();
    return loaded.net;
  }
  const auto digest = config.teacher_digest();
  const auto dir = store.teacher_dir(digest);
  const auto ckpt = dir / "teacher.ckpt";
  if (fs::exists(ckpt)) {
    say(options, "using cached teacher " + digest.substr(0, 12));
    auto loaded = load_checkpoint(ckpt);
    check_teacher_fits(loaded.net, config, ckpt.string());
    loaded.net->freeze_all();
    return loaded.net;
  }
  if (!config.teacher.train_if_missing) {
    throw ConfigError("missing teacher: no cached teacher " + digest.substr(0, 12) +
                      " and teacher.train_if_missing is false; run `skd train-teacher` first");
  }

  say(options, "training teacher ResNet" + std::to_string(config.teacher.variant) + " on " + config.dataset.name);
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  TrainData data;
  data.train = load_dataset(config.dataset, Split::train);
  data.train_indices = all_indices(*data.train);
  data.val = load_dataset(config.dataset, Split::val);
  data.augment = augment_for(config);

  DistillConfig tc;
  tc.method = Method::none;
  tc.task = config.dataset.task;
  tc.epochs_per_stage = config.teacher.epochs;
  tc.learning_rate = config.teacher.learning_rate;
  tc.schedule = config.teacher.schedule;
  tc.batch_size = config.teacher.batch_size;
  tc.seed = config.teacher.seed;
  tc.validate_each_epoch = false;

  fs::create_directories(dir);
  RunHooks hooks;
  hooks.log_path = dir / "train_log.jsonl";
  fs::remove(*hooks.log_path);
  auto teacher = build_network(config.dataset.task, config.teacher.variant, config.dataset.num_classes(),
                               config.teacher.seed);
  auto result = train_no_teacher(teacher, data, tc, hooks);
  const auto eval = evaluate(result.student, data.val, data.augment.resolution);
  say(options, "teacher " + eval.metric + " = " + std::to_string(eval.value));

  json meta = {{"role", "teacher"},
               {"teacher_digest", digest},
               {"dataset", config.dataset.name},
               {"metric_name", eval.metric},
               {"metric", eval.value}};
  save_checkpoint(result.student, ckpt, meta);
  json info = {{"digest", digest},
               {"config", {{"dataset", config.canonical()["dataset"]}, {"teacher", config.canonical()["teacher"]}}},
               {"metric_name", eval.metric},
               {"metric", eval.value},
               {"train_log", result.log.to_json()},
               {"framework_version", framework_version()},
               {"started_at", started},
               {"finished_at", utc_now()},
               {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  write_json(dir / "teacher.json", info);
  result.student->freeze_all();
  return result.student;
}

RunOutcome run_experiment(const ExperimentConfig& config, RecordStore& store, const RunOptions& options) {
  config.training.validate();
  const auto digest = config.digest();
  const auto canonical = config.canonical();
  const auto dir = store.run_dir(digest);

  if (fs::exists(dir / "config.json") && read_json(dir / "config.json") != canonical) {
    throw IntegrityError("run directory " + dir.string() + " holds a different config under digest " + digest);
  }
  if (auto existing = store.find(digest)) {
    if (existing->config != canonical) {
      throw IntegrityError("record " + digest + " was produced by a different config");
    }
    if (!options.force) {
      say(options, "skipping completed run " + digest.substr(0, 12));
      return {*existing, true};
    }
  }

  const auto& cfg = config.training;
  say(options, "run " + digest.substr(0, 12) + ": " + to_string(cfg.method) + " ResNet" +
                   std::to_string(config.student_variant) + " fraction " + std::to_string(cfg.data_fraction) +
                   " seed " + std::to_string(cfg.seed));
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  fs::create_directories(dir);
  write_json(dir / "config.json", canonical);
  if (options.force) {
    fs::remove_all(dir / "phases");
    fs::remove(dir / "train_log.jsonl");
  }

  TrainData data;
  data.train = load_dataset(config.dataset, Split::train);
  data.val = load_dataset(config.dataset, Split::val);
  data.augment = augment_for(config);
  auto sample = sample_fraction(*data.train, cfg.data_fraction, cfg.seed);
  save_fraction_sample(sample, dir / "fraction.json");
  data.train_indices = sample.indices;

  StagedNetwork teacher{nullptr};
  std::string teacher_digest;
  if (cfg.method != Method::none) {
    teacher = obtain_teacher(config, store, options);
    teacher_digest = network_digest(teacher);
  }
  auto student = build_network(config.dataset.task, config.student_variant, config.dataset.num_classes(), cfg.seed);

  RunHooks hooks;
  hooks.log_path = dir / "train_log.jsonl";
  hooks.checkpoint_dir = dir / "phases";
  // A progress file left by an interrupted run lets training resume.
  hooks.resume = fs::exists(*hooks.checkpoint_dir / "progress.json");
  if (!hooks.resume) fs::remove(*hooks.log_path);
  hooks.on_epoch = [&](const EpochRecord& e) {
    std::ostringstream os;
    os << "  " << e.phase << " epoch " << e.epoch << " loss " << e.train_loss;
    if (std::isfinite(e.val_metric)) os << " " << e.metric << " " << e.val_metric;
    say(options, os.str());
  };
  auto result = distill(teacher, student, data, cfg, hooks);
  write_json(dir / "train_log.json", result.log.to_json());

  const auto eval = evaluate(result.student, data.val, data.augment.resolution);
  fs::create_directories(dir / "checkpoints");
  const auto ckpt_name = checkpoint_file_name(result.student->model_name(), config.dataset.name,
                                              to_string(cfg.method), cfg.data_fraction, cfg.seed);
  save_checkpoint(result.student, dir / "checkpoints" / ckpt_name,
                  {{"digest", digest}, {"metric_name", eval.metric}, {"metric", eval.value}});

  ExperimentRecord record;
  record.digest = digest;
  record.config = canonical;
  record.dataset = config.dataset.name;
  record.task = to_string(config.dataset.task);
  record.method = to_string(cfg.method);
  record.fraction = cfg.data_fraction;
  record.seed = cfg.seed;
  record.teacher_variant = config.teacher.variant;
  record.student_variant = config.student_variant;
  record.metric_name = eval.metric;
  record.metric = eval.value;
  record.teacher_digest = teacher_digest;
  record.train_log = "train_log.jsonl";
  record.checkpoints = {"checkpoints/" + ckpt_name};
  record.framework_version = framework_version();
  record.started_at = started;
  record.finished_at = utc_now();
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  store.add(record);
  say(options, "  " + eval.metric + " = " + std::to_string(eval.value));
  return {record, false};
}

}  // namespace skd
