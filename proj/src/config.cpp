#include "skd/digest.hpp"
#include "skd/errors.hpp"
#include "skd/harness.hpp"

#include <fstream>
#include <set>

namespace skd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string framework_version() { return std::string("skd 0.1.0 (libtorch ") + TORCH_VERSION + ")"; }

namespace {

void reject_unknown(const json& section, const std::set<std::string>& allowed, const std::string& where) {
  if (!section.is_object()) throw ConfigError("'" + where + "' must be an object");
  std::string unknown;
  for (const auto& [key, value] : section.items()) {
    if (!allowed.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) {
    std::string known;
    for (const auto& k : allowed) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown key(s) in " + where + ": " + unknown + " (allowed: " + known + ")");
  }
}

template <typename T>
void read(const json& section, const char* key, T& out, const std::string& where) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

DatasetSpec base_dataset(const std::string& name, TaskKind& task) {
  if (name == "synthetic") {
    task = TaskKind::classification;
    return synthetic_classification_spec(200, 100, 32, 0);
  }
  if (name == "synthetic_seg") {
    task = TaskKind::segmentation;
    return synthetic_segmentation_spec(64, 32, 64, 0);
  }
  auto spec = dataset_spec(name);
  task = spec.task;
  return spec;
}

bool is_synthetic(const DatasetSpec& spec) { return spec.name == "synthetic" || spec.name == "synthetic_seg"; }

ExperimentConfig apply_preset(const std::string& preset, const std::string& dataset) {
  ExperimentConfig cfg;
  cfg.preset = preset;
  TaskKind task = TaskKind::classification;
  cfg.dataset = base_dataset(dataset, task);
  if (preset == "desk") {
    cfg.teacher.variant = 14;
    cfg.teacher.epochs = 10;
    cfg.teacher.learning_rate = 1e-3;
    cfg.student_variant = 10;
    cfg.training = DistillConfig{};
    cfg.training.task = task;
    cfg.training.epochs_per_stage = 5;
    cfg.training.learning_rate = 1e-3;
    cfg.training.batch_size = 16;
    if (task == TaskKind::segmentation) cfg.training.schedule = Schedule::one_cycle;
  } else if (preset == "paper") {
    cfg.training = DistillConfig::paper_defaults(task);
    cfg.teacher.variant = 34;
    cfg.teacher.epochs = cfg.training.epochs_per_stage;
    cfg.teacher.learning_rate = cfg.training.learning_rate;
    cfg.teacher.schedule = cfg.training.schedule;
    cfg.student_variant = 10;
  } else {
    throw ConfigError("unknown preset '" + preset + "'; expected desk or paper");
  }
  cfg.teacher.batch_size = cfg.training.batch_size;
  return cfg;
}

json dataset_json(const DatasetSpec& spec, bool with_location) {
  json j = {{"name", spec.name},
            {"task", to_string(spec.task)},
            {"train_size", spec.split_sizes[0]},
            {"val_size", spec.split_sizes[1]},
            {"test_size", spec.split_sizes[2]},
            {"resolution", spec.resolution},
            {"num_classes", spec.num_classes()}};
  if (is_synthetic(spec)) {
    j["noise"] = spec.noise;
    j["seed"] = spec.seed;
  }
  if (with_location) j["root"] = spec.root.string();
  return j;
}

json teacher_json(const TeacherConfig& t, bool with_location) {
  json j = {{"variant", t.variant},       {"epochs", t.epochs},         {"learning_rate", t.learning_rate},
            {"schedule", to_string(t.schedule)}, {"batch_size", t.batch_size}, {"seed", t.seed},
            {"source", t.checkpoint ? "checkpoint" : "trained"}};
  if (with_location) {
    j.erase("source");
    if (t.checkpoint) j["checkpoint"] = t.checkpoint->string();
    j["train_if_missing"] = t.train_if_missing;
  }
  return j;
}

}  // namespace

ExperimentConfig preset_config(const std::string& preset, const std::string& dataset) {
  return apply_preset(preset, dataset);
}

ExperimentConfig parse_config(const json& j) {
  reject_unknown(j, {"preset", "dataset", "teacher", "student", "training"}, "config");
  if (!j.contains("dataset")) throw ConfigError("config is missing the 'dataset' section");
  const auto& d = j.at("dataset");
  reject_unknown(d,
                 {"name", "root", "task", "train_size", "val_size", "test_size", "resolution", "num_classes",
                  "noise", "seed"},
                 "dataset");
  if (!d.contains("name")) throw ConfigError("dataset.name is required");
  std::string name;
  read(d, "name", name, "dataset");
  std::string preset = "desk";
  read(j, "preset", preset, "config");

  ExperimentConfig cfg = apply_preset(preset, name);
  auto& spec = cfg.dataset;

  // Dataset overrides.
  if (d.contains("task")) {
    std::string task;
    read(d, "task", task, "dataset");
    if (task_kind_from_string(task) != spec.task) {
      throw ConfigError("dataset.task '" + task + "' contradicts dataset '" + name + "'");
    }
  }
  read(d, "train_size", spec.split_sizes[0], "dataset");
  read(d, "val_size", spec.split_sizes[1], "dataset");
  read(d, "test_size", spec.split_sizes[2], "dataset");
  read(d, "resolution", spec.resolution, "dataset");
  if (d.contains("root")) {
    std::string root;
    read(d, "root", root, "dataset");
    spec.root = root;
  }
  if (d.contains("num_classes")) {
    int64_t classes = 0;
    read(d, "num_classes", classes, "dataset");
    if (is_synthetic(spec)) {
      auto regenerated = spec.task == TaskKind::classification
                             ? synthetic_classification_spec(spec.split_sizes[0], spec.split_sizes[1],
                                                             spec.resolution, spec.seed, classes)
                             : synthetic_segmentation_spec(spec.split_sizes[0], spec.split_sizes[1],
                                                           spec.resolution, spec.seed, classes);
      spec.class_names = regenerated.class_names;
    } else if (classes != spec.num_classes()) {
      throw ConfigError("dataset '" + name + "' has " + std::to_string(spec.num_classes()) + " classes, not " +
                        std::to_string(classes));
    }
  }
  if (is_synthetic(spec)) {
    read(d, "noise", spec.noise, "dataset");
    read(d, "seed", spec.seed, "dataset");
  } else if (d.contains("noise") || d.contains("seed")) {
    throw ConfigError("dataset.noise and dataset.seed only apply to synthetic datasets");
  }
  if (spec.resolution < 32) throw ConfigError("dataset.resolution must be >= 32");
  if (spec.split_sizes[0] < 1) throw ConfigError("dataset.train_size must be >= 1");

  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    reject_unknown(t,
                   {"variant", "epochs", "learning_rate", "schedule", "batch_size", "seed", "checkpoint",
                    "train_if_missing"},
                   "teacher");
    read(t, "variant", cfg.teacher.variant, "teacher");
    read(t, "epochs", cfg.teacher.epochs, "teacher");
    read(t, "learning_rate", cfg.teacher.learning_rate, "teacher");
    read(t, "batch_size", cfg.teacher.batch_size, "teacher");
    read(t, "seed", cfg.teacher.seed, "teacher");
    read(t, "train_if_missing", cfg.teacher.train_if_missing, "teacher");
    if (t.contains("schedule")) {
      std::string s;
      read(t, "schedule", s, "teacher");
      cfg.teacher.schedule = schedule_from_string(s);
    }
    if (t.contains("checkpoint")) {
      std::string path;
      read(t, "checkpoint", path, "teacher");
      cfg.teacher.checkpoint = fs::path(path);
    }
  }
  if (!is_supported_variant(cfg.teacher.variant)) {
    throw ConfigError("teacher.variant " + std::to_string(cfg.teacher.variant) + " is not a supported ResNet depth");
  }
  if (cfg.teacher.epochs < 1) throw ConfigError("teacher.epochs must be >= 1");
  if (!(cfg.teacher.learning_rate > 0.0)) throw ConfigError("teacher.learning_rate must be positive");
  if (cfg.teacher.batch_size < 1) throw ConfigError("teacher.batch_size must be >= 1");

  if (j.contains("student")) {
    const auto& s = j.at("student");
    reject_unknown(s, {"variant"}, "student");
    read(s, "variant", cfg.student_variant, "student");
  }
  if (!is_supported_variant(cfg.student_variant)) {
    throw ConfigError("student.variant " + std::to_string(cfg.student_variant) + " is not a supported ResNet depth");
  }

  auto& tr = cfg.training;
  tr.task = spec.task;
  if (j.contains("training")) {
    const auto& t = j.at("training");
    reject_unknown(t,
                   {"method", "task", "epochs_per_stage", "learning_rate", "schedule", "seed", "data_fraction",
                    "normalization", "beta", "batch_size", "finetune_backbone_in_head_phase", "validate_each_epoch"},
                   "training");
    std::string text;
    if (t.contains("method")) {
      read(t, "method", text, "training");
      tr.method = method_from_string(text);
    }
    if (t.contains("task")) {
      read(t, "task", text, "training");
      if (task_kind_from_string(text) != spec.task) throw ConfigError("training.task contradicts the dataset task");
    }
    if (t.contains("schedule")) {
      read(t, "schedule", text, "training");
      tr.schedule = schedule_from_string(text);
    }
    if (t.contains("normalization")) {
      read(t, "normalization", text, "training");
      tr.normalization = mse_normalization_from_string(text);
    }
    read(t, "epochs_per_stage", tr.epochs_per_stage, "training");
    read(t, "learning_rate", tr.learning_rate, "training");
    read(t, "seed", tr.seed, "training");
    read(t, "data_fraction", tr.data_fraction, "training");
    read(t, "beta", tr.beta, "training");
    read(t, "batch_size", tr.batch_size, "training");
    read(t, "finetune_backbone_in_head_phase", tr.finetune_backbone_in_head_phase, "training");
    read(t, "validate_each_epoch", tr.validate_each_epoch, "training");
  }
  tr.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json ExperimentConfig::canonical() const {
  return {{"dataset", dataset_json(dataset, false)},
          {"teacher", teacher_json(teacher, false)},
          {"student", {{"variant", student_variant}}},
          {"training", training.to_json()}};
}

json ExperimentConfig::to_json() const {
  json j = {{"preset", preset},
            {"dataset", dataset_json(dataset, true)},
            {"teacher", teacher_json(teacher, true)},
            {"student", {{"variant", student_variant}}},
            {"training", training.to_json()}};
  return j;
}

std::string ExperimentConfig::digest() const { return sha256_hex(canonical().dump()); }

std::string ExperimentConfig::teacher_digest() const {
  json j = {{"dataset", dataset_json(dataset, false)}, {"teacher", teacher_json(teacher, false)}};
  return sha256_hex(j.dump());
}

}  // namespace skd
