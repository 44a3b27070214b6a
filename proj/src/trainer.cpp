#include "skd/trainer.hpp"

#include "skd/checkpoint.hpp"
#include "skd/digest.hpp"
#include "skd/errors.hpp"
#include "skd/eval.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace skd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Enums and config
// ---------------------------------------------------------------------------

std::string to_string(Method method) {
  switch (method) {
    case Method::stagewise: return "stagewise";
    case Method::simultaneous: return "simultaneous";
    case Method::traditional: return "traditional";
    case Method::fsp: return "fsp";
    case Method::at: return "at";
    case Method::none: return "none";
  }
  return "?";
}

Method method_from_string(const std::string& text) {
  for (auto m : all_methods()) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown method '" + text + "'; expected stagewise, simultaneous, traditional, fsp, at or none");
}

std::string method_display_name(Method method) {
  switch (method) {
    case Method::stagewise: return "Stagewise KD";
    case Method::simultaneous: return "Simultaneous KD";
    case Method::traditional: return "Traditional KD";
    case Method::fsp: return "FSP KD";
    case Method::at: return "AT KD";
    case Method::none: return "No Teacher";
  }
  return "?";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> order = {Method::none, Method::traditional, Method::simultaneous,
                                            Method::fsp,  Method::at,          Method::stagewise};
  return order;
}

void DistillConfig::validate() const {
  if (epochs_per_stage < 1) throw ConfigError("epochs_per_stage must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (beta < 0.0) throw ConfigError("beta must be non-negative");
}

DistillConfig DistillConfig::paper_defaults(TaskKind task) {
  DistillConfig cfg;
  cfg.task = task;
  if (task == TaskKind::classification) {
    cfg.epochs_per_stage = 100;
    cfg.learning_rate = 1e-4;
    cfg.schedule = Schedule::constant;
  } else {
    cfg.epochs_per_stage = 50;
    cfg.learning_rate = 1e-2;
    cfg.schedule = Schedule::one_cycle;
  }
  return cfg;
}

nlohmann::json DistillConfig::to_json() const {
  return {{"method", to_string(method)},
          {"task", to_string(task)},
          {"epochs_per_stage", epochs_per_stage},
          {"learning_rate", learning_rate},
          {"schedule", to_string(schedule)},
          {"seed", seed},
          {"data_fraction", data_fraction},
          {"normalization", to_string(normalization)},
          {"beta", beta},
          {"batch_size", batch_size},
          {"finetune_backbone_in_head_phase", finetune_backbone_in_head_phase},
          {"validate_each_epoch", validate_each_epoch}};
}

int phase_count(Method method) {
  switch (method) {
    case Method::stagewise: return kNumStages + 1;
    case Method::traditional:
    case Method::fsp: return 2;
    default: return 1;
  }
}

// ---------------------------------------------------------------------------
// Logs
// ---------------------------------------------------------------------------

int TrainLog::total_epochs() const {
  int total = 0;
  for (const auto& p : phases) total += static_cast<int>(p.epochs.size());
  return total;
}

namespace {

nlohmann::json metric_value(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double metric_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json epoch_json(const EpochRecord& e) {
  return {{"phase", e.phase},         {"epoch", e.epoch},   {"train_loss", metric_value(e.train_loss)},
          {"val_metric", metric_value(e.val_metric)}, {"metric", e.metric}, {"lr", e.lr}};
}

}  // namespace

nlohmann::json TrainLog::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["teacher_digest_before"] = teacher_digest_before;
  j["teacher_digest_after"] = teacher_digest_after;
  j["phases"] = nlohmann::json::array();
  for (const auto& p : phases) {
    nlohmann::json pj = {{"name", p.name},
                         {"objective", p.objective},
                         {"stage", p.stage},
                         {"optimizer_steps", p.optimizer_steps},
                         {"wall_seconds", p.wall_seconds},
                         {"digests_before", p.digests_before},
                         {"digests_after", p.digests_after}};
    pj["epochs"] = nlohmann::json::array();
    for (const auto& e : p.epochs) pj["epochs"].push_back(epoch_json(e));
    j["phases"].push_back(pj);
  }
  return j;
}

TrainLog TrainLog::from_json(const nlohmann::json& j) {
  TrainLog log;
  log.method = j.at("method").get<std::string>();
  log.teacher_digest_before = j.value("teacher_digest_before", "");
  log.teacher_digest_after = j.value("teacher_digest_after", "");
  for (const auto& pj : j.at("phases")) {
    PhaseLog p;
    p.name = pj.at("name").get<std::string>();
    p.objective = pj.at("objective").get<std::string>();
    p.stage = pj.at("stage").get<int>();
    p.optimizer_steps = pj.at("optimizer_steps").get<int64_t>();
    p.wall_seconds = pj.at("wall_seconds").get<double>();
    p.digests_before = pj.at("digests_before").get<std::vector<std::string>>();
    p.digests_after = pj.at("digests_after").get<std::vector<std::string>>();
    for (const auto& ej : pj.at("epochs")) {
      EpochRecord e;
      e.phase = ej.at("phase").get<std::string>();
      e.epoch = ej.at("epoch").get<int>();
      e.train_loss = metric_from(ej.at("train_loss"));
      e.val_metric = metric_from(ej.at("val_metric"));
      e.metric = ej.at("metric").get<std::string>();
      e.lr = ej.at("lr").get<double>();
      p.epochs.push_back(e);
    }
    log.phases.push_back(std::move(p));
  }
  return log;
}

std::vector<std::string> group_digests(const StagedNetwork& net) {
  std::vector<std::string> digests;
  for (const auto& id : all_groups()) digests.push_back(tensor_digest(net->group_state(id)));
  return digests;
}

std::string network_digest(const StagedNetwork& net) {
  std::vector<std::pair<std::string, torch::Tensor>> all;
  for (const auto& id : all_groups()) {
    auto g = net->group_state(id);
    all.insert(all.end(), g.begin(), g.end());
  }
  return tensor_digest(all);
}

// ---------------------------------------------------------------------------
// Phase runner
// ---------------------------------------------------------------------------

namespace {

struct Phase {
  std::string name;
  std::string objective;
  int stage = 0;
  std::function<void()> configure;
  std::function<torch::Tensor(const Batch&)> loss;
  /// Validate with the task metric (accuracy / mIoU) rather than the
  /// phase objective on the validation split.
  bool task_metric = false;
  /// Run the student with running BN statistics while training this phase.
  /// A student that already matches the teacher then sees exactly zero loss.
  bool student_eval = false;
};

class Runner {
 public:
  Runner(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
         const RunHooks& hooks)
      : teacher_(std::move(teacher)), student_(std::move(student)), data_(data), cfg_(cfg), hooks_(hooks) {
    cfg_.validate();
    if (!data_.train) throw DataError("training split missing");
    if (cfg_.task != student_->kind()) {
      throw ConfigError("config task " + to_string(cfg_.task) + " does not match student " + student_->model_name());
    }
    indices_ = data_.train_indices.empty() ? sample_fraction(*data_.train, cfg_.data_fraction, cfg_.seed).indices
                                           : data_.train_indices;
    if (indices_.empty()) throw DataError("empty training subset");
    if (teacher_) check_teacher();
  }

  StagedNetwork& student() { return student_; }

  std::vector<torch::Tensor> teacher_taps(const torch::Tensor& x, int upto) {
    torch::NoGradGuard no_grad;
    return teacher_->encode(x, upto).taps;
  }

  torch::Tensor task_term(const torch::Tensor& logits, const Batch& b) const {
    return task_loss(logits, b.targets, data_.train->spec().ignore_index);
  }

  TrainResult run(Method method, std::vector<Phase> phases) {
    torch::manual_seed(cfg_.seed);
    TrainResult result;
    result.log.method = to_string(method);
    if (teacher_) result.log.teacher_digest_before = network_digest(teacher_);

    std::size_t start = 0;
    if (hooks_.resume && hooks_.checkpoint_dir) start = restore_progress(result.log, phases);
    if (hooks_.log_path && hooks_.log_path->has_parent_path()) fs::create_directories(hooks_.log_path->parent_path());

    for (std::size_t i = start; i < phases.size(); ++i) {
      result.log.phases.push_back(run_phase(phases[i], static_cast<int>(i)));
      if (hooks_.checkpoint_dir) save_progress(result.log, phases[i], i);
    }
    student_->eval();
    if (teacher_) {
      result.log.teacher_digest_after = network_digest(teacher_);
      if (result.log.teacher_digest_after != result.log.teacher_digest_before) {
        throw IntegrityError("teacher parameters changed during " + to_string(method) + " training");
      }
    }
    result.student = student_;
    return result;
  }

 private:
  void check_teacher() {
    if (!teacher_->is_fully_frozen()) throw ConfigError("teacher must be fully frozen before distillation");
    if (teacher_->kind() != student_->kind()) throw ConfigError("teacher and student solve different tasks");
    teacher_->eval();
    // Probe tap shapes on a tiny deterministic batch.
    LoaderOptions opts;
    opts.batch_size = 2;
    opts.augment = data_.augment;
    std::vector<std::size_t> probe(indices_.begin(), indices_.begin() + std::min<std::size_t>(2, indices_.size()));
    auto batch = BatchLoader(data_.train, probe, opts).batch(0, 0);
    torch::NoGradGuard no_grad;
    const bool was_training = student_->is_training();
    student_->eval();
    auto t = teacher_->encode(batch.images).taps;
    auto s = student_->encode(batch.images).taps;
    student_->train(was_training);
    for (int i = 0; i < kNumStages; ++i) {
      if (t[i].sizes() != s[i].sizes()) {
        std::ostringstream os;
        os << "stage " << (i + 1) << ": teacher tap " << t[i].sizes() << " vs student tap " << s[i].sizes();
        throw ShapeError(os.str());
      }
    }
  }

  BatchLoader train_loader(int phase_index) const {
    LoaderOptions opts;
    opts.batch_size = cfg_.batch_size;
    opts.train_mode = true;
    opts.shuffle = true;
    opts.seed = mix_seed(cfg_.seed, static_cast<uint64_t>(phase_index));
    opts.augment = data_.augment;
    return BatchLoader(data_.train, indices_, opts);
  }

  double validate(const Phase& phase) {
    if (!data_.val) return std::numeric_limits<double>::quiet_NaN();
    if (phase.task_metric) {
      return evaluate(student_, data_.val, data_.augment.resolution, std::max<int64_t>(cfg_.batch_size, 32)).value;
    }
    const bool was_training = student_->is_training();
    student_->eval();
    torch::NoGradGuard no_grad;
    LoaderOptions opts;
    opts.batch_size = std::max<int64_t>(cfg_.batch_size, 32);
    opts.augment = data_.augment;
    BatchLoader loader(data_.val, all_indices(*data_.val), opts);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < loader.num_batches(); ++b) {
      auto batch = loader.batch(0, b);
      total += phase.loss(batch).item<double>() * static_cast<double>(batch.indices.size());
      count += batch.indices.size();
    }
    student_->train(was_training);
    return total / static_cast<double>(count);
  }

  PhaseLog run_phase(const Phase& phase, int phase_index) {
    const auto t0 = std::chrono::steady_clock::now();
    PhaseLog log;
    log.name = phase.name;
    log.objective = phase.objective;
    log.stage = phase.stage;
    log.digests_before = group_digests(student_);

    phase.configure();
    if (phase.student_eval) {
      student_->eval();
    } else {
      student_->train();
    }
    auto params = student_->trainable_parameters();
    torch::optim::Adam optimizer(params, torch::optim::AdamOptions(cfg_.learning_rate));
    auto loader = train_loader(phase_index);
    const auto batches = static_cast<int64_t>(loader.num_batches());
    LrSchedule schedule(cfg_.schedule, cfg_.learning_rate, batches * cfg_.epochs_per_stage);

    for (int epoch = 0; epoch < cfg_.epochs_per_stage; ++epoch) {
      double loss_sum = 0.0;
      std::size_t seen = 0;
      double lr = cfg_.learning_rate;
      for (int64_t b = 0; b < batches; ++b) {
        lr = schedule.at(log.optimizer_steps);
        for (auto& group : optimizer.param_groups()) {
          static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
        auto batch = loader.batch(epoch, static_cast<std::size_t>(b));
        optimizer.zero_grad();
        auto loss = phase.loss(batch);
        if (loss.requires_grad()) {
          loss.backward();
          optimizer.step();
        }
        ++log.optimizer_steps;
        loss_sum += loss.item<double>() * static_cast<double>(batch.indices.size());
        seen += batch.indices.size();
      }
      EpochRecord rec;
      rec.phase = phase.name;
      rec.epoch = epoch;
      rec.train_loss = loss_sum / static_cast<double>(seen);
      rec.metric = phase.task_metric ? (cfg_.task == TaskKind::classification ? "top1_accuracy" : "mean_iou")
                                     : "val_" + phase.objective;
      rec.lr = lr;
      const bool last = epoch + 1 == cfg_.epochs_per_stage;
      rec.val_metric = (cfg_.validate_each_epoch || last) ? validate(phase) : std::numeric_limits<double>::quiet_NaN();
      emit(rec, phase_index, phase.stage);
      log.epochs.push_back(rec);
    }
    student_->eval();
    log.digests_after = group_digests(student_);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
  }

  void emit(const EpochRecord& rec, int phase_index, int stage) const {
    if (hooks_.log_path) {
      auto j = epoch_json(rec);
      j["method"] = to_string(cfg_.method);
      j["phase_index"] = phase_index;
      j["stage"] = stage;
      std::ofstream out(*hooks_.log_path, std::ios::app);
      out << j.dump() << '\n';
    }
    if (hooks_.on_epoch) hooks_.on_epoch(rec);
  }

  fs::path phase_checkpoint(std::size_t index, const std::string& name) const {
    return *hooks_.checkpoint_dir / ("phase" + std::to_string(index) + "_" + name + ".ckpt");
  }

  void save_progress(const TrainLog& log, const Phase& phase, std::size_t index) const {
    fs::create_directories(*hooks_.checkpoint_dir);
    save_checkpoint(student_, phase_checkpoint(index, phase.name),
                    {{"phase_index", index}, {"phase", phase.name}, {"method", log.method}});
    nlohmann::json progress = {{"completed_phases", index + 1}, {"config", cfg_.to_json()}, {"log", log.to_json()}};
    const auto path = *hooks_.checkpoint_dir / "progress.json";
    auto tmp = path;
    tmp += ".tmp";
    std::ofstream(tmp, std::ios::trunc) << progress.dump(2) << '\n';
    fs::rename(tmp, path);
  }

  std::size_t restore_progress(TrainLog& log, const std::vector<Phase>& phases) {
    const auto path = *hooks_.checkpoint_dir / "progress.json";
    if (!fs::exists(path)) return 0;
    std::ifstream in(path);
    auto progress = nlohmann::json::parse(in);
    if (progress.at("config") != cfg_.to_json()) {
      throw IntegrityError("cannot resume from " + path.string() + ": it was written by a different config");
    }
    const auto done = progress.at("completed_phases").get<std::size_t>();
    if (done == 0) return 0;
    if (done > phases.size()) throw IntegrityError("progress file claims more phases than the method has");
    auto saved = TrainLog::from_json(progress.at("log"));
    load_checkpoint_into(student_, phase_checkpoint(done - 1, phases[done - 1].name));
    log.phases = std::move(saved.phases);
    return done;
  }

  StagedNetwork teacher_;
  StagedNetwork student_;
  const TrainData& data_;
  DistillConfig cfg_;
  const RunHooks& hooks_;
  std::vector<std::size_t> indices_;
};

Phase task_phase(Runner& r, std::string name, std::function<void()> configure) {
  Phase p;
  p.name = std::move(name);
  p.objective = "cross_entropy";
  p.configure = std::move(configure);
  p.loss = [&r](const Batch& b) { return r.task_term(r.student()->forward(b.images).output, b); };
  p.task_metric = true;
  return p;
}

DistillConfig with_method(DistillConfig cfg, Method method) {
  cfg.method = method;
  return cfg;
}

void require_teacher(const StagedNetwork& teacher, Method method) {
  if (!teacher) throw ConfigError(to_string(method) + " distillation requires a teacher network");
}

}  // namespace

TrainResult train_stagewise(StagedNetwork teacher, StagedNetwork student, const TrainData& data,
                            const DistillConfig& cfg, const RunHooks& hooks) {
  require_teacher(teacher, Method::stagewise);
  Runner r(teacher, student, data, with_method(cfg, Method::stagewise), hooks);
  std::vector<Phase> phases;
  for (int s = 1; s <= kNumStages; ++s) {
    Phase p;
    p.name = "stage" + std::to_string(s);
    p.objective = "stage_mse";
    p.stage = s;
    p.student_eval = true;
    p.configure = [&r, s] { r.student()->set_trainable(StageId::stage(s)); };
    p.loss = [&r, s, mode = cfg.normalization](const Batch& b) {
      auto t = r.teacher_taps(b.images, s);
      auto st = r.student()->encode(b.images, s).taps;
      return stage_mse(t[s - 1], st[s - 1], mode, s);
    };
    phases.push_back(std::move(p));
  }
  phases.push_back(task_phase(r, "head", [&r, finetune = cfg.finetune_backbone_in_head_phase] {
    if (finetune) {
      r.student()->set_trainable_all();
    } else {
      r.student()->set_trainable(StageId::head());
    }
  }));
  return r.run(Method::stagewise, std::move(phases));
}

TrainResult train_simultaneous(StagedNetwork teacher, StagedNetwork student, const TrainData& data,
                               const DistillConfig& cfg, const RunHooks& hooks) {
  require_teacher(teacher, Method::simultaneous);
  Runner r(teacher, student, data, with_method(cfg, Method::simultaneous), hooks);
  Phase p;
  p.name = "joint";
  p.objective = "simultaneous";
  p.configure = [&r] { r.student()->set_trainable_all(); };
  p.loss = [&r](const Batch& b) {
    auto t = r.teacher_taps(b.images, kNumStages);
    auto out = r.student()->forward(b.images);
    std::vector<FeatureTapPair> pairs;
    for (int i = 0; i < kNumStages; ++i) pairs.push_back({t[i], out.taps[i], i + 1});
    return simultaneous_loss(pairs, r.task_term(out.output, b));
  };
  p.task_metric = true;
  return r.run(Method::simultaneous, {p});
}

TrainResult train_traditional(StagedNetwork teacher, StagedNetwork student, const TrainData& data,
                              const DistillConfig& cfg, const RunHooks& hooks) {
  require_teacher(teacher, Method::traditional);
  Runner r(teacher, student, data, with_method(cfg, Method::traditional), hooks);
  Phase hint;
  hint.name = "hint";
  hint.objective = "stage_mse";
  hint.stage = kHintStage;
  hint.configure = [&r] { r.student()->set_trainable_backbone(); };
  hint.loss = [&r, mode = cfg.normalization](const Batch& b) {
    auto t = r.teacher_taps(b.images, kHintStage);
    auto s = r.student()->encode(b.images, kHintStage).taps;
    return stage_mse(t[kHintStage - 1], s[kHintStage - 1], mode, kHintStage);
  };
  return r.run(Method::traditional, {hint, task_phase(r, "task", [&r] { r.student()->set_trainable_all(); })});
}

TrainResult train_fsp(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                      const RunHooks& hooks) {
  require_teacher(teacher, Method::fsp);
  Runner r(teacher, student, data, with_method(cfg, Method::fsp), hooks);
  Phase fsp;
  fsp.name = "fsp";
  fsp.objective = "fsp";
  fsp.configure = [&r] { r.student()->set_trainable_backbone(); };
  fsp.loss = [&r](const Batch& b) {
    auto t = r.teacher_taps(b.images, kNumStages);
    auto s = r.student()->encode(b.images).taps;
    return fsp_loss(s, t);
  };
  return r.run(Method::fsp, {fsp, task_phase(r, "task", [&r] { r.student()->set_trainable_all(); })});
}

TrainResult train_at(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                     const RunHooks& hooks) {
  require_teacher(teacher, Method::at);
  Runner r(teacher, student, data, with_method(cfg, Method::at), hooks);
  Phase p;
  p.name = "joint";
  p.objective = "attention+ce";
  p.configure = [&r] { r.student()->set_trainable_all(); };
  p.loss = [&r, beta = cfg.beta](const Batch& b) {
    auto t = r.teacher_taps(b.images, kNumStages);
    auto out = r.student()->forward(b.images);
    return r.task_term(out.output, b) + attention_loss(out.taps, t, beta);
  };
  p.task_metric = true;
  return r.run(Method::at, {p});
}

TrainResult train_no_teacher(StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                             const RunHooks& hooks) {
  Runner r(StagedNetwork{nullptr}, student, data, with_method(cfg, Method::none), hooks);
  return r.run(Method::none, {task_phase(r, "task", [&r] { r.student()->set_trainable_all(); })});
}

TrainResult distill(StagedNetwork teacher, StagedNetwork student, const TrainData& data, const DistillConfig& cfg,
                    const RunHooks& hooks) {
  switch (cfg.method) {
    case Method::stagewise: return train_stagewise(teacher, student, data, cfg, hooks);
    case Method::simultaneous: return train_simultaneous(teacher, student, data, cfg, hooks);
    case Method::traditional: return train_traditional(teacher, student, data, cfg, hooks);
    case Method::fsp: return train_fsp(teacher, student, data, cfg, hooks);
    case Method::at: return train_at(teacher, student, data, cfg, hooks);
    case Method::none: return train_no_teacher(student, data, cfg, hooks);
  }
  throw ConfigError("unknown method");
}

}  // namespace skd
