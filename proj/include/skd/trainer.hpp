#pragma once

#include "skd/data.hpp"
#include "skd/model_zoo.hpp"
#include "skd/objectives.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace skd {

enum class Method { stagewise, simultaneous, traditional, fsp, at, none };

std::string to_string(Method method);
Method method_from_string(const std::string& text);
/// Table row label, e.g. "Stagewise KD", "No Teacher".
std::string method_display_name(Method method);
/// Methods in report row order.
const std::vector<Method>& all_methods();

enum class Schedule { constant, one_cycle };

std::string to_string(Schedule schedule);
Schedule schedule_from_string(const std::string& text);

struct DistillConfig {
  Method method = Method::stagewise;
  TaskKind task = TaskKind::classification;
  int epochs_per_stage = 100;
  double learning_rate = 1e-4;
  Schedule schedule = Schedule::constant;
  uint64_t seed = 0;
  double data_fraction = 1.0;
  MseNormalization normalization = MseNormalization::batch_only;
  double beta = 1.0;
  int64_t batch_size = 16;
  /// Head phase of stagewise training also updates the distilled backbone.
  bool finetune_backbone_in_head_phase = false;
  /// Evaluate on the validation split after every epoch, not only the last.
  bool validate_each_epoch = true;

  /// Throws ConfigError when a field is out of range.
  void validate() const;

  /// Published settings: classification Adam lr 1e-4, constant, 100
  /// epochs per stage; segmentation Adam one-cycle max lr 1e-2, 50 epochs.
  static DistillConfig paper_defaults(TaskKind task);

  nlohmann::json to_json() const;
};

/// Learning-rate schedule over a fixed number of optimisation steps.
/// one_cycle: cosine warm-up from max/25 to max over the first 25% of
/// steps, then cosine decay to max/1e5.
class LrSchedule {
 public:
  LrSchedule(Schedule kind, double max_lr, int64_t total_steps);
  double at(int64_t step) const;

 private:
  Schedule kind_;
  double max_lr_;
  int64_t total_steps_;
};

struct EpochRecord {
  std::string phase;
  int epoch = 0;
  double train_loss = 0.0;
  /// NaN when validation was skipped for this epoch.
  double val_metric = 0.0;
  std::string metric;
  double lr = 0.0;
};

struct PhaseLog {
  std::string name;       // stage1..stage4, head, hint, fsp, joint, task
  std::string objective;  // stage_mse, cross_entropy, simultaneous, fsp, attention+ce
  int stage = 0;          // 1-based for stage phases, 0 otherwise
  std::vector<EpochRecord> epochs;
  int64_t optimizer_steps = 0;
  double wall_seconds = 0.0;
  /// Per-group digests (stage1..stageN, head) of the student before and
  /// after the phase.
  std::vector<std::string> digests_before;
  std::vector<std::string> digests_after;
};

struct TrainLog {
  std::string method;
  std::vector<PhaseLog> phases;
  std::string teacher_digest_before;
  std::string teacher_digest_after;

  int total_epochs() const;
  nlohmann::json to_json() const;
  static TrainLog from_json(const nlohmann::json& j);
};

struct TrainData {
  DatasetPtr train;
  /// Subset of `train` to optimise on; empty means sample
  /// cfg.data_fraction with cfg.seed.
  std::vector<std::size_t> train_indices;
  DatasetPtr val;
  AugmentParams augment;
};

struct RunHooks {
  /// Line-delimited JSON, one object per epoch, appended.
  std::optional<std::filesystem::path> log_path;
  /// Student checkpoint and progress file after every phase.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Skip phases already recorded in checkpoint_dir.
  bool resume = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  StagedNetwork student{nullptr};
  TrainLog log;
};

/// Progressive block-by-block distillation: for each stage s = 1..N only
/// stage s trains, minimising stage_mse against teacher tap s; then the
/// head trains on labels with the backbone frozen (unless
/// finetune_backbone_in_head_phase). Yields N + 1 phases.
TrainResult train_stagewise(StagedNetwork teacher, StagedNetwork student, const TrainData& data,
                            const DistillConfig& cfg, const RunHooks& hooks = {});

/// One phase, everything trainable, minimising the joint stage-MSE + CE.
TrainResult train_simultaneous(StagedNetwork teacher, StagedNetwork student, const TrainData& data,
                               const DistillConfig& cfg, const RunHooks& hooks = {});

/// Phase 1: backbone trains on the single hint tap (kHintStage). Phase 2:
/// whole student trains on the task loss.
TrainResult train_traditional(StagedNetwork teacher, StagedNetwork student, const TrainData& data,
                              const DistillConfig& cfg, const RunHooks& hooks = {});

/// Phase 1: backbone trains on fsp_loss. Phase 2: whole student on the task.
TrainResult train_fsp(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                      const RunHooks& hooks = {});

/// One phase, task loss + attention_loss(beta), everything trainable.
TrainResult train_at(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                     const RunHooks& hooks = {});

/// One phase of plain task training.
TrainResult train_no_teacher(StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                             const RunHooks& hooks = {});

/// Dispatches on cfg.method. `teacher` may be null for Method::none.
TrainResult distill(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                    const RunHooks& hooks = {});

/// Number of phases a method runs: N + 1, 2 or 1.
int phase_count(Method method);

/// Digests of stage1..stageN and head (parameters and buffers).
std::vector<std::string> group_digests(const StagedNetwork& net);
std::string network_digest(const StagedNetwork& net);

}  // namespace skd
