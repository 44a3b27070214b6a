#include "helpers.hpp"

#include "skd/errors.hpp"
#include "skd/objectives.hpp"
#include "skd/trainer.hpp"

#include "doctest_torch.hpp"

#include <fstream>

using namespace skd;

namespace {

double stage1_mse(StagedNetwork& teacher, StagedNetwork& student, const torch::Tensor& x) {
  torch::NoGradGuard ng;
  student->eval();
  auto t = teacher->encode(x, 1).taps[0];
  auto s = student->encode(x, 1).taps[0];
  return stage_mse(t, s).item<double>();
}

torch::Tensor held_out_batch(const TrainData& data) {
  LoaderOptions opts;
  opts.batch_size = 8;
  return BatchLoader(data.val, all_indices(*data.val), opts).batch(0, 0).images;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config validation and names") {
  DistillConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs_per_stage = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = DistillConfig{};
  cfg.data_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.data_fraction = 1.01;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = DistillConfig{};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  auto cls = DistillConfig::paper_defaults(TaskKind::classification);
  CHECK(cls.learning_rate == 1e-4);
  CHECK(cls.epochs_per_stage == 100);
  CHECK(cls.schedule == Schedule::constant);
  auto seg = DistillConfig::paper_defaults(TaskKind::segmentation);
  CHECK(seg.learning_rate == 1e-2);
  CHECK(seg.epochs_per_stage == 50);
  CHECK(seg.schedule == Schedule::one_cycle);

  for (auto m : all_methods()) CHECK(method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("dark"), ConfigError);
  CHECK(method_display_name(Method::stagewise) == "Stagewise KD");
  CHECK(phase_count(Method::stagewise) == 5);
  CHECK(phase_count(Method::fsp) == 2);
  CHECK(phase_count(Method::at) == 1);
}

TEST_CASE("one-cycle schedule shape") {
  LrSchedule s(Schedule::one_cycle, 1e-2, 100);
  CHECK(s.at(0) == doctest::Approx(1e-2 / 25));
  CHECK(s.at(25) == doctest::Approx(1e-2));
  CHECK(s.at(99) < 1e-4);
  for (int i = 1; i <= 25; ++i) CHECK(s.at(i) >= s.at(i - 1));
  for (int i = 26; i < 100; ++i) CHECK(s.at(i) <= s.at(i - 1));
  LrSchedule c(Schedule::constant, 3e-4, 10);
  CHECK(c.at(0) == 3e-4);
  CHECK(c.at(9) == 3e-4);
}

TEST_CASE("phase structure and epoch accounting") {
  auto data = testing::tiny_classification();
  auto teacher = testing::frozen_teacher();
  const std::map<Method, std::vector<std::string>> expected = {
      {Method::stagewise, {"stage1", "stage2", "stage3", "stage4", "head"}},
      {Method::traditional, {"hint", "task"}},
      {Method::fsp, {"fsp", "task"}},
      {Method::simultaneous, {"joint"}},
      {Method::at, {"joint"}},
      {Method::none, {"task"}}};
  for (const auto& [method, names] : expected) {
    auto cfg = testing::quick_config(method, 2);
    auto result = distill(method == Method::none ? StagedNetwork{nullptr} : teacher, build_resnet(10, 2, 1), data, cfg);
    std::vector<std::string> got;
    for (const auto& p : result.log.phases) got.push_back(p.name);
    CHECK_MESSAGE(got == names, to_string(method));
    CHECK(result.log.total_epochs() == 2 * static_cast<int>(names.size()));
    CHECK(result.log.method == to_string(method));
    if (method != Method::none) CHECK(result.log.teacher_digest_before == result.log.teacher_digest_after);
  }
}

TEST_CASE("stagewise training touches one group per phase") {
  auto data = testing::tiny_classification();
  auto teacher = testing::frozen_teacher(14);
  const auto teacher_digest = network_digest(teacher);
  auto result = train_stagewise(teacher, build_resnet(10, 2, 2), data, testing::quick_config(Method::stagewise, 2));
  REQUIRE(result.log.phases.size() == 5);
  for (int p = 0; p < 5; ++p) {
    const auto& phase = result.log.phases[p];
    for (int g = 0; g < 5; ++g) {
      if (g == p) {
        CHECK_MESSAGE(phase.digests_before[g] != phase.digests_after[g], "phase ", p);
      } else {
        CHECK_MESSAGE(phase.digests_before[g] == phase.digests_after[g], "phase ", p, " group ", g);
      }
    }
    CHECK(phase.optimizer_steps == 4);
  }
  CHECK(network_digest(teacher) == teacher_digest);
}

TEST_CASE("head phase may fine-tune the backbone on request") {
  auto data = testing::tiny_classification();
  auto cfg = testing::quick_config(Method::stagewise, 1);
  cfg.finetune_backbone_in_head_phase = true;
  auto result = train_stagewise(testing::frozen_teacher(), build_resnet(10, 2, 2), data, cfg);
  const auto& head = result.log.phases.back();
  for (int g = 0; g < 5; ++g) CHECK(head.digests_before[g] != head.digests_after[g]);
}

TEST_CASE("a student copied from the teacher stays at zero stage loss") {
  auto data = testing::tiny_classification();
  auto teacher = build_resnet(10, 2, 5);
  {
    // Non-trivial running statistics.
    torch::NoGradGuard ng;
    teacher->train();
    teacher->forward(held_out_batch(data));
  }
  teacher->freeze_all();
  auto student = clone_network(teacher);
  student->set_trainable_all();
  auto x = held_out_batch(data);
  CHECK(stage1_mse(teacher, student, x) == 0.0);
  auto result = train_stagewise(teacher, student, data, testing::quick_config(Method::stagewise, 2));
  for (int p = 0; p < 4; ++p) {
    for (const auto& e : result.log.phases[p].epochs) CHECK(e.train_loss < 1e-8);
    CHECK(result.log.phases[p].digests_before == result.log.phases[p].digests_after);
  }
}

TEST_CASE("stage 1 distillation reduces held-out MSE") {
  auto data = testing::tiny_classification(32, 8);
  auto teacher = testing::frozen_teacher(14);
  auto student = build_resnet(10, 2, 3);
  auto x = held_out_batch(data);
  const double before = stage1_mse(teacher, student, x);
  auto cfg = testing::quick_config(Method::stagewise, 3);
  auto result = train_stagewise(teacher, student, data, cfg);
  CHECK(stage1_mse(teacher, result.student, x) < before);
}

TEST_CASE("the hint phase ignores deeper teacher stages") {
  auto data = testing::tiny_classification();
  auto teacher_a = build_resnet(10, 2, 21);
  auto teacher_b = clone_network(teacher_a);
  {
    torch::NoGradGuard ng;
    for (auto& p : teacher_b->group_parameters(StageId::stage(4))) p.add_(1.0);
    for (auto& p : teacher_b->group_parameters(StageId::stage(3))) p.mul_(-2.0);
  }
  teacher_a->freeze_all();
  teacher_b->freeze_all();
  auto cfg = testing::quick_config(Method::traditional, 1);
  auto ra = train_traditional(teacher_a, build_resnet(10, 2, 4), data, cfg);
  auto rb = train_traditional(teacher_b, build_resnet(10, 2, 4), data, cfg);
  CHECK(ra.log.phases[0].digests_after == rb.log.phases[0].digests_after);
  CHECK(ra.log.phases[0].epochs[0].train_loss == rb.log.phases[0].epochs[0].train_loss);
}

TEST_CASE("attention transfer with beta zero equals plain training") {
  auto data = testing::tiny_classification();
  auto cfg = testing::quick_config(Method::at, 2);
  cfg.beta = 0.0;
  auto at = train_at(testing::frozen_teacher(), build_resnet(10, 2, 6), data, cfg);
  auto plain = train_no_teacher(build_resnet(10, 2, 6), data, cfg);
  CHECK(network_digest(at.student) == network_digest(plain.student));
}

TEST_CASE("simultaneous training updates every group") {
  auto data = testing::tiny_classification(8, 4);
  auto result =
      train_simultaneous(testing::frozen_teacher(), build_resnet(10, 2, 7), data, testing::quick_config(Method::simultaneous));
  const auto& p = result.log.phases[0];
  for (int g = 0; g < 5; ++g) CHECK(p.digests_before[g] != p.digests_after[g]);
}

TEST_CASE("identical configs reproduce identical students") {
  auto data = testing::tiny_classification();
  auto cfg = testing::quick_config(Method::fsp, 1);
  auto a = train_fsp(testing::frozen_teacher(), build_resnet(10, 2, 8), data, cfg);
  auto b = train_fsp(testing::frozen_teacher(), build_resnet(10, 2, 8), data, cfg);
  CHECK(network_digest(a.student) == network_digest(b.student));
}

TEST_CASE("no-teacher training memorises a single example") {
  // 64 px keeps the last stage at 2x2, enough for batch statistics of one
  // example.
  auto spec = synthetic_classification_spec(2, 2, 64, 1);
  TrainData data;
  data.train = load_dataset(spec, Split::train);
  data.train_indices = {0};
  data.augment.resolution = 64;
  data.augment.pad = 0;
  auto cfg = testing::quick_config(Method::none, 30);
  cfg.batch_size = 1;
  auto net = build_resnet(10, 2, 1);
  auto result = train_no_teacher(net, data, cfg);
  CHECK(result.log.phases[0].epochs.back().train_loss < 0.05);
}

TEST_CASE("preconditions") {
  auto data = testing::tiny_classification();
  auto cfg = testing::quick_config(Method::stagewise);
  auto unfrozen = build_resnet(10, 2, 1);
  CHECK_THROWS_AS(train_stagewise(unfrozen, build_resnet(10, 2), data, cfg), ConfigError);
  CHECK_THROWS_AS(train_stagewise(StagedNetwork{nullptr}, build_resnet(10, 2), data, cfg), ConfigError);
  auto seg_teacher = build_unet(10, 2, 1);
  seg_teacher->freeze_all();
  CHECK_THROWS_AS(train_stagewise(seg_teacher, build_resnet(10, 2), data, cfg), ConfigError);
}

TEST_CASE("JSONL log and resume after interruption") {
  testing::TempDir dir("resume");
  auto data = testing::tiny_classification();
  auto cfg = testing::quick_config(Method::stagewise, 1);
  auto teacher = testing::frozen_teacher();
  auto reference = train_stagewise(teacher, build_resnet(10, 2, 9), data, cfg);

  RunHooks hooks;
  hooks.log_path = dir.path() / "log.jsonl";
  hooks.checkpoint_dir = dir.path() / "phases";
  hooks.on_epoch = [](const EpochRecord& e) {
    if (e.phase == "stage3") throw std::runtime_error("interrupted");
  };
  CHECK_THROWS(train_stagewise(teacher, build_resnet(10, 2, 9), data, cfg, hooks));
  CHECK(std::filesystem::exists(dir.path() / "phases" / "progress.json"));

  hooks.on_epoch = nullptr;
  hooks.resume = true;
  auto resumed = train_stagewise(teacher, build_resnet(10, 2, 9), data, cfg, hooks);
  CHECK(network_digest(resumed.student) == network_digest(reference.student));
  CHECK(resumed.log.phases.size() == 5);

  std::ifstream in(*hooks.log_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("phase"));
    ++lines;
  }
  CHECK(lines >= 5);

  auto round = TrainLog::from_json(resumed.log.to_json());
  CHECK(round.to_json() == resumed.log.to_json());
}

TEST_CASE("segmentation stagewise distils encoder stages then trains the decoder") {
  auto spec = synthetic_segmentation_spec(4, 2, 32, 2);
  TrainData data;
  data.train = load_dataset(spec, Split::train);
  data.val = load_dataset(spec, Split::val);
  data.augment.resolution = 32;
  auto teacher = build_unet(14, 3, 1);
  teacher->freeze_all();
  auto cfg = testing::quick_config(Method::stagewise, 1);
  cfg.task = TaskKind::segmentation;
  cfg.batch_size = 2;
  cfg.validate_each_epoch = true;
  auto result = train_stagewise(teacher, build_unet(10, 3, 2), data, cfg);
  CHECK(result.log.phases.size() == 5);
  CHECK(result.log.phases.back().epochs[0].metric == "mean_iou");
  CHECK(std::isfinite(result.log.phases.back().epochs[0].val_metric));
}

}  // TEST_SUITE
