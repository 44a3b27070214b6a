#pragma once

#include "skd/data.hpp"
#include "skd/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace skd {

/// Version string stamped into every record.
std::string framework_version();

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

struct TeacherConfig {
  int variant = 14;
  int epochs = 10;
  double learning_rate = 1e-3;
  Schedule schedule = Schedule::constant;
  int64_t batch_size = 16;
  uint64_t seed = 0;
  /// Use this checkpoint instead of the cached / freshly trained teacher.
  std::optional<std::filesystem::path> checkpoint;
  /// Train (and cache) the teacher when no cached copy exists. When false a
  /// missing teacher is a ConfigError.
  bool train_if_missing = true;
};

/// One run: dataset, teacher, student and training settings.
///
/// JSON layout (every key optional unless noted, unknown keys rejected):
///
///   {
///     "preset": "desk" | "paper",
///     "dataset": {"name" (required), "root", "train_size", "val_size",
///                 "resolution", "num_classes", "noise", "seed"},
///     "teacher": {"variant", "epochs", "learning_rate", "schedule",
///                 "batch_size", "seed", "checkpoint", "train_if_missing"},
///     "student": {"variant"},
///     "training": {"method", "epochs_per_stage", "learning_rate", "schedule",
///                  "seed", "data_fraction", "normalization", "beta",
///                  "batch_size", "finetune_backbone_in_head_phase",
///                  "validate_each_epoch"}
///   }
///
/// A preset fills defaults; explicit keys override them.
struct ExperimentConfig {
  std::string preset;
  DatasetSpec dataset;
  TeacherConfig teacher;
  int student_variant = 10;
  DistillConfig training;

  /// Fully resolved config with sorted keys; the dataset root and teacher
  /// checkpoint location are excluded since they name places, not inputs.
  nlohmann::json canonical() const;
  /// SHA-256 of canonical().dump().
  std::string digest() const;
  /// Digest of the inputs that determine the teacher alone.
  std::string teacher_digest() const;
  nlohmann::json to_json() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Preset without any overrides.
ExperimentConfig preset_config(const std::string& preset, const std::string& dataset = "synthetic");

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct ExperimentRecord {
  std::string digest;
  nlohmann::json config;  // canonical config
  std::string dataset;
  std::string task;
  std::string method;
  double fraction = 1.0;
  uint64_t seed = 0;
  int teacher_variant = 0;
  int student_variant = 0;
  std::string metric_name;
  double metric = 0.0;
  std::string teacher_digest;
  /// Relative to the run directory.
  std::string train_log;
  std::vector<std::string> checkpoints;
  std::string framework_version;
  std::string started_at;
  std::string finished_at;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  static ExperimentRecord from_json(const nlohmann::json& j);
  bool operator==(const ExperimentRecord& other) const;
};

/// Directory-backed record store.
///
///   <root>/index.jsonl          one record per line, append-only
///   <root>/runs/<digest>/       config.json, train_log.jsonl, checkpoints/,
///                               fraction.json, record.json
///   <root>/teachers/<digest>/   teacher.ckpt, teacher.json
///
/// Index updates take an exclusive lock on <root>/index.lock and replace the
/// index via write-to-temp + rename, so concurrent writers never interleave.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& digest) const;
  std::filesystem::path teacher_dir(const std::string& digest) const;
  std::filesystem::path index_path() const;

  /// The completed record for `digest`, if any.
  std::optional<ExperimentRecord> find(const std::string& digest) const;
  /// Writes record.json and appends to the index. Re-adding an identical
  /// record is a no-op; a different record under the same digest is an
  /// IntegrityError.
  void add(const ExperimentRecord& record);
  /// Index contents in insertion order.
  std::vector<ExperimentRecord> records() const;

 private:
  std::filesystem::path root_;
};

/// $SKD_RUNS_DIR or "./runs".
std::filesystem::path runs_root_from_env();

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunOptions {
  /// Rerun even when a completed record exists (the old record must then
  /// match the new one, or an IntegrityError is raised).
  bool force = false;
  std::function<void(const std::string&)> log;
};

struct RunOutcome {
  ExperimentRecord record;
  bool skipped = false;
};

/// Trains (or loads from the store) the teacher described by `config`.
/// The result is fully frozen.
StagedNetwork obtain_teacher(const ExperimentConfig& config, RecordStore& store, const RunOptions& options = {});

/// Runs config.training.method end to end and records the outcome.
RunOutcome run_experiment(const ExperimentConfig& config, RecordStore& store, const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

enum class ReportLayout { classification_table, segmentation_table };

std::string to_string(ReportLayout layout);
ReportLayout report_layout_from_string(const std::string& text);

struct Report {
  std::string csv;
  std::string text;
};

/// Rows are method x fraction blocks (full data first, then ascending
/// fractions; methods in all_methods() order), columns are student
/// variants. A cell is the median over seeds. Throws ConfigError when the
/// records mix datasets or do not fit the layout.
Report render_report(const std::vector<ExperimentRecord>& records, ReportLayout layout);

}  // namespace skd
