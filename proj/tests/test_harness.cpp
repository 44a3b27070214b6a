#include "helpers.hpp"

#include "skd/errors.hpp"
#include "skd/harness.hpp"

#include "doctest_torch.hpp"

#include <fstream>
#include <set>
#include <thread>

using namespace skd;
using nlohmann::json;

namespace {

json tiny_config_json(const std::string& method = "none", double fraction = 1.0) {
  auto j = json::parse(R"({
    "preset": "desk",
    "dataset": {"name": "synthetic", "train_size": 16, "val_size": 8, "resolution": 32, "seed": 5},
    "teacher": {"variant": 10, "epochs": 1},
    "student": {"variant": 10},
    "training": {"epochs_per_stage": 1, "batch_size": 8, "validate_each_epoch": false}
  })");
  j["training"]["method"] = method;
  j["training"]["data_fraction"] = fraction;
  return j;
}

ExperimentRecord sample_record(const std::string& method, double fraction, int student, uint64_t seed, double metric,
                               const std::string& dataset = "synthetic") {
  ExperimentRecord r;
  r.digest = method + std::to_string(fraction) + std::to_string(student) + std::to_string(seed) + dataset;
  r.config = {{"k", r.digest}};
  r.dataset = dataset;
  r.task = "classification";
  r.method = method;
  r.fraction = fraction;
  r.seed = seed;
  r.teacher_variant = 34;
  r.student_variant = student;
  r.metric_name = "top1_accuracy";
  r.metric = metric;
  r.framework_version = "test";
  return r;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("unknown config keys fail fast and are listed") {
  auto message_for = [](const json& j) -> std::string {
    try {
      parse_config(j);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "no error";
  };
  auto j = tiny_config_json();
  j["training"]["epochs_per_stag"] = 3;
  const auto msg = message_for(j);
  CHECK(msg.find("epochs_per_stag") != std::string::npos);
  CHECK(msg.find("epochs_per_stage") != std::string::npos);  // allowed keys are listed
  auto c = tiny_config_json();
  c["dataset"]["colour"] = "blue";
  CHECK(message_for(c).find("colour") != std::string::npos);
  auto k = tiny_config_json();
  k["extra"] = 1;
  CHECK_THROWS_AS(parse_config(k), ConfigError);
  auto m = tiny_config_json();
  m["training"]["method"] = "magic";
  CHECK_THROWS_AS(parse_config(m), ConfigError);
  auto t = tiny_config_json();
  t["training"]["epochs_per_stage"] = "three";
  CHECK_THROWS_AS(parse_config(t), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"preset", "desk"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"preset", "huge"}, {"dataset", {{"name", "synthetic"}}}}), ConfigError);
}

TEST_CASE("digests are stable and discriminating") {
  auto a = parse_config(tiny_config_json());
  // Same content written in another key order.
  auto reordered = json::parse(R"({
    "training": {"validate_each_epoch": false, "batch_size": 8, "epochs_per_stage": 1, "data_fraction": 1.0,
                 "method": "none"},
    "student": {"variant": 10},
    "teacher": {"epochs": 1, "variant": 10},
    "dataset": {"seed": 5, "resolution": 32, "val_size": 8, "train_size": 16, "name": "synthetic"},
    "preset": "desk"
  })");
  CHECK(parse_config(reordered).digest() == a.digest());
  // A fully explicit config describes the same run.
  CHECK(parse_config(a.to_json()).digest() == a.digest());
  CHECK(parse_config(tiny_config_json("stagewise")).digest() != a.digest());
  CHECK(parse_config(tiny_config_json("none", 0.5)).digest() != a.digest());
  // Location of the data does not change what was run.
  auto moved = tiny_config_json();
  moved["dataset"]["root"] = "/elsewhere";
  CHECK(parse_config(moved).digest() == a.digest());
  CHECK(a.digest().size() == 64);
}

TEST_CASE("presets") {
  auto desk = preset_config("desk");
  CHECK(desk.teacher.variant == 14);
  CHECK(desk.student_variant == 10);
  CHECK(desk.training.epochs_per_stage <= 5);
  CHECK(desk.dataset.name == "synthetic");
  auto paper = preset_config("paper", "imagenette");
  CHECK(paper.teacher.variant == 34);
  CHECK(paper.training.learning_rate == 1e-4);
  CHECK(paper.training.epochs_per_stage == 100);
  auto seg = preset_config("paper", "camvid");
  CHECK(seg.training.schedule == Schedule::one_cycle);
  CHECK(seg.training.learning_rate == 1e-2);
  CHECK(seg.training.task == TaskKind::segmentation);
}

TEST_CASE("record serialisation round-trips") {
  auto r = sample_record("stagewise", 0.3, 14, 2, 0.8125);
  r.checkpoints = {"checkpoints/a.ckpt"};
  r.wall_seconds = 1.0 / 3.0;
  r.started_at = "2024-01-01T00:00:00Z";
  auto back = ExperimentRecord::from_json(json::parse(r.to_json().dump()));
  CHECK(back == r);
  CHECK(back.metric == r.metric);
  CHECK(back.wall_seconds == r.wall_seconds);
  CHECK_THROWS_AS(ExperimentRecord::from_json(json{{"digest", "x"}}), IntegrityError);
}

TEST_CASE("record store is append-only and detects conflicts") {
  testing::TempDir dir("store");
  RecordStore store(dir.path());
  auto r = sample_record("none", 1.0, 10, 0, 0.5);
  store.add(r);
  store.add(r);
  CHECK(store.records().size() == 1);
  CHECK(store.find(r.digest).value() == r);
  CHECK_FALSE(store.find("feed").has_value());
  auto clash = r;
  clash.config = {{"k", "other"}};
  CHECK_THROWS_AS(store.add(clash), IntegrityError);
}

TEST_CASE("concurrent writers keep every record") {
  testing::TempDir dir("store_mt");
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      RecordStore store(dir.path());
      for (int i = 0; i < 10; ++i) store.add(sample_record("none", 1.0, 10, static_cast<uint64_t>(t * 100 + i), 0.5));
    });
  }
  for (auto& th : threads) th.join();
  RecordStore store(dir.path());
  auto all = store.records();
  CHECK(all.size() == 40);
  std::set<std::string> digests;
  for (const auto& r : all) digests.insert(r.digest);
  CHECK(digests.size() == 40);
}

TEST_CASE("smallest run, idempotent rerun") {
  testing::TempDir dir("run");
  RecordStore store(dir.path());
  auto cfg = parse_config(tiny_config_json());
  auto first = run_experiment(cfg, store);
  CHECK_FALSE(first.skipped);
  CHECK(std::isfinite(first.record.metric));
  CHECK(first.record.metric_name == "top1_accuracy");
  const auto run_dir = store.run_dir(first.record.digest);
  CHECK(std::filesystem::exists(run_dir / "config.json"));
  CHECK(std::filesystem::exists(run_dir / "record.json"));
  CHECK(std::filesystem::exists(run_dir / "fraction.json"));
  CHECK(std::filesystem::exists(run_dir / first.record.checkpoints.at(0)));
  auto log = TrainLog::from_json(json::parse(std::ifstream(run_dir / "train_log.json")));
  CHECK(log.phases.size() == 1);

  auto second = run_experiment(cfg, store);
  CHECK(second.skipped);
  CHECK(second.record.digest == first.record.digest);
  CHECK(store.records().size() == 1);
}

TEST_CASE("grid of methods and fractions gives distinct records") {
  testing::TempDir dir("grid");
  RecordStore store(dir.path());
  std::set<std::string> digests;
  for (const std::string method : {"stagewise", "none"}) {
    for (double fraction : {0.1, 1.0}) {
      auto outcome = run_experiment(parse_config(tiny_config_json(method, fraction)), store);
      digests.insert(outcome.record.digest);
    }
  }
  CHECK(digests.size() == 4);
  CHECK(store.records().size() == 4);
  // The stagewise runs share one cached teacher.
  CHECK(std::distance(std::filesystem::directory_iterator(dir.path() / "teachers"),
                      std::filesystem::directory_iterator{}) == 1);
}

TEST_CASE("missing teacher is a config error") {
  testing::TempDir dir("noteacher");
  RecordStore store(dir.path());
  auto j = tiny_config_json("stagewise");
  j["teacher"]["train_if_missing"] = false;
  CHECK_THROWS_AS(run_experiment(parse_config(j), store), ConfigError);
  j["teacher"]["checkpoint"] = (dir.path() / "absent.ckpt").string();
  CHECK_THROWS_AS(run_experiment(parse_config(j), store), MissingFileError);
}

TEST_CASE("report layout") {
  auto empty = render_report({}, ReportLayout::classification_table);
  CHECK(empty.csv == "row,method,fraction,ResNet10,ResNet14,ResNet18,ResNet20,ResNet26\n");

  auto one = render_report({sample_record("fsp", 1.0, 14, 0, 0.5)}, ReportLayout::classification_table);
  CHECK(one.csv ==
        "row,method,fraction,ResNet14\n"
        "No Teacher,none,1,\n"
        "Traditional KD,traditional,1,\n"
        "Simultaneous KD,simultaneous,1,\n"
        "FSP KD,fsp,1,0.500000\n"
        "AT KD,at,1,\n"
        "Stagewise KD,stagewise,1,\n");
  CHECK(one.text.find("50.0") != std::string::npos);

  std::vector<ExperimentRecord> records = {
      sample_record("stagewise", 0.25, 10, 0, 0.9), sample_record("stagewise", 0.25, 10, 1, 0.7),
      sample_record("stagewise", 0.25, 10, 2, 0.8), sample_record("none", 1.0, 10, 0, 0.6),
      sample_record("none", 0.1, 14, 0, 0.4)};
  auto rep = render_report(records, ReportLayout::classification_table);
  std::vector<std::string> rows;
  std::istringstream in(rep.csv);
  for (std::string line; std::getline(in, line);) rows.push_back(line.substr(0, line.find(',')));
  REQUIRE(rows.size() == 19);
  CHECK(rows[1] == "No Teacher");
  CHECK(rows[6] == "Stagewise KD");
  CHECK(rows[7] == "No Teacher - 10% Data");
  CHECK(rows[13] == "No Teacher - 25% Data");
  CHECK(rows[18] == "Stagewise KD - 25% Data");
  CHECK(rep.csv.find("Stagewise KD - 25% Data,stagewise,0.25,0.800000,") != std::string::npos);

  std::reverse(records.begin(), records.end());
  CHECK(render_report(records, ReportLayout::classification_table).csv == rep.csv);

  records.push_back(sample_record("none", 1.0, 10, 0, 0.6, "cifar10"));
  CHECK_THROWS_AS(render_report(records, ReportLayout::classification_table), ConfigError);
  CHECK_THROWS_AS(render_report({sample_record("none", 1.0, 10, 0, 0.6)}, ReportLayout::segmentation_table),
                  ConfigError);
}

}  // TEST_SUITE
