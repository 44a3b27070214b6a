// Command-line front end: teacher training, distillation runs, evaluation
// and table rendering over a record store.

#include "skd/checkpoint.hpp"
#include "skd/errors.hpp"
#include "skd/eval.hpp"
#include "skd/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string runs_dir;
  bool quiet = false;

  skd::RecordStore store() const {
    return skd::RecordStore(runs_dir.empty() ? skd::runs_root_from_env() : fs::path(runs_dir));
  }
  skd::RunOptions options(bool force) const {
    skd::RunOptions o;
    o.force = force;
    if (!quiet) o.log = [](const std::string& line) { std::cerr << line << '\n'; };
    return o;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--runs-dir", common.runs_dir, "Record store root (default $SKD_RUNS_DIR or ./runs)");
  cmd->add_flag("-q,--quiet", common.quiet, "Suppress progress output");
}

int run_train_teacher(const std::string& config_path, const Common& common) {
  auto config = skd::load_config(config_path);
  auto store = common.store();
  auto teacher = skd::obtain_teacher(config, store, common.options(false));
  const auto dir = store.teacher_dir(config.teacher_digest());
  nlohmann::json out = {{"teacher_digest", config.teacher_digest()},
                        {"model", teacher->model_name()},
                        {"checkpoint", (dir / "teacher.ckpt").string()}};
  if (fs::exists(dir / "teacher.json")) {
    std::ifstream in(dir / "teacher.json");
    auto info = nlohmann::json::parse(in);
    out["metric_name"] = info.at("metric_name");
    out["metric"] = info.at("metric");
  }
  std::cout << out.dump() << '\n';
  return skd::kExitOk;
}

struct DistillArgs {
  std::string config;
  std::string method;
  double fraction = 0.0;
  int64_t seed = -1;
  int student = 0;
  bool force = false;
};

int run_distill(const DistillArgs& args, const Common& common) {
  auto config = skd::load_config(args.config);
  if (!args.method.empty()) config.training.method = skd::method_from_string(args.method);
  if (args.fraction > 0.0) config.training.data_fraction = args.fraction;
  if (args.seed >= 0) config.training.seed = static_cast<uint64_t>(args.seed);
  if (args.student > 0) {
    if (!skd::is_supported_variant(args.student)) {
      throw skd::ConfigError("unsupported student variant " + std::to_string(args.student));
    }
    config.student_variant = args.student;
  }
  config.training.validate();
  auto store = common.store();
  auto outcome = skd::run_experiment(config, store, common.options(args.force));
  nlohmann::json out = {{"digest", outcome.record.digest},
                        {"skipped", outcome.skipped},
                        {"method", outcome.record.method},
                        {"fraction", outcome.record.fraction},
                        {"seed", outcome.record.seed},
                        {"metric_name", outcome.record.metric_name},
                        {"metric", outcome.record.metric},
                        {"run_dir", store.run_dir(outcome.record.digest).string()}};
  std::cout << out.dump() << '\n';
  return skd::kExitOk;
}

int run_evaluate(const std::string& checkpoint, const std::string& config_path, const std::string& dataset_name,
                 const std::string& split_name) {
  auto loaded = skd::load_checkpoint(checkpoint);
  skd::ExperimentConfig config = config_path.empty()
                                     ? skd::preset_config("desk", dataset_name.empty() ? "synthetic" : dataset_name)
                                     : skd::load_config(config_path);
  const auto& spec = config.dataset;
  if (loaded.net->kind() != spec.task || loaded.net->num_classes() != spec.num_classes()) {
    throw skd::ConfigError("checkpoint " + loaded.net->model_name() + " with " +
                           std::to_string(loaded.net->num_classes()) + " classes does not fit dataset " + spec.name);
  }
  skd::Split split = skd::Split::val;
  if (split_name == "test") {
    split = skd::Split::test;
  } else if (split_name == "train") {
    split = skd::Split::train;
  } else if (split_name != "val") {
    throw skd::ConfigError("unknown split '" + split_name + "'");
  }
  auto data = skd::load_dataset(spec, split);
  auto result = skd::evaluate(loaded.net, data, spec.resolution);
  nlohmann::json out = {{"checkpoint", checkpoint},
                        {"model", loaded.net->model_name()},
                        {"dataset", spec.name},
                        {"split", split_name},
                        {"metric_name", result.metric},
                        {"metric", result.value}};
  std::cout << out.dump() << '\n';
  return skd::kExitOk;
}

int run_report(const std::string& dataset, const std::string& layout_name, const std::string& format,
               const std::string& csv_out, const Common& common) {
  const auto layout = skd::report_layout_from_string(layout_name);
  auto store = common.store();
  std::vector<skd::ExperimentRecord> selected;
  for (auto& r : store.records()) {
    if (r.dataset == dataset) selected.push_back(std::move(r));
  }
  auto report = skd::render_report(selected, layout);
  if (!csv_out.empty()) {
    std::ofstream out(csv_out, std::ios::binary | std::ios::trunc);
    out << report.csv;
  }
  if (format == "csv") {
    std::cout << report.csv;
  } else if (format == "text") {
    std::cout << report.text;
  } else {
    throw skd::ConfigError("unknown format '" + format + "'; expected text or csv");
  }
  return skd::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stagewise knowledge distillation experiments"};
  app.require_subcommand(1);
  Common common;

  std::string teacher_config;
  auto* teacher_cmd = app.add_subcommand("train-teacher", "Train and cache the teacher described by a config");
  teacher_cmd->add_option("--config", teacher_config, "Experiment config (JSON)")->required();
  add_common(teacher_cmd, common);

  DistillArgs distill_args;
  auto* distill_cmd = app.add_subcommand("distill", "Run one distillation experiment");
  distill_cmd->add_option("--config", distill_args.config, "Experiment config (JSON)")->required();
  distill_cmd->add_option("--method", distill_args.method, "stagewise|simultaneous|traditional|fsp|at|none");
  distill_cmd->add_option("--fraction", distill_args.fraction, "Training data fraction in (0, 1]");
  distill_cmd->add_option("--seed", distill_args.seed, "Run seed");
  distill_cmd->add_option("--student", distill_args.student, "Student ResNet depth");
  distill_cmd->add_flag("--force", distill_args.force, "Rerun even if the digest already completed");
  add_common(distill_cmd, common);

  std::string checkpoint, eval_config, eval_dataset, eval_split = "val";
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "Config naming the dataset");
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset name when no config is given");
  eval_cmd->add_option("--split", eval_split, "train|val|test");

  std::string report_dataset, report_layout = "classification_table", report_format = "text", report_csv;
  auto* report_cmd = app.add_subcommand("report", "Tabulate recorded runs");
  report_cmd->add_option("--dataset", report_dataset, "Dataset whose records to tabulate")->required();
  report_cmd->add_option("--layout", report_layout, "classification_table|segmentation_table");
  report_cmd->add_option("--format", report_format, "text|csv");
  report_cmd->add_option("--csv", report_csv, "Also write the CSV to this file");
  add_common(report_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? skd::kExitOk : skd::kExitConfig;
  }

  try {
    if (*teacher_cmd) return run_train_teacher(teacher_config, common);
    if (*distill_cmd) return run_distill(distill_args, common);
    if (*eval_cmd) return run_evaluate(checkpoint, eval_config, eval_dataset, eval_split);
    if (*report_cmd) return run_report(report_dataset, report_layout, report_format, report_csv, common);
  } catch (const std::exception& e) {
    std::cerr << "skd: " << e.what() << '\n';
    return skd::exit_code_for(e);
  }
  return skd::kExitFailure;
}
