#pragma once

#include "skd/data.hpp"
#include "skd/trainer.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("skd_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Small synthetic classification problem at 32 px.
inline skd::TrainData tiny_classification(int64_t train = 16, int64_t val = 8, uint64_t seed = 3) {
  auto spec = skd::synthetic_classification_spec(train, val, 32, seed);
  skd::TrainData data;
  data.train = skd::load_dataset(spec, skd::Split::train);
  data.val = skd::load_dataset(spec, skd::Split::val);
  data.augment.resolution = 32;
  data.augment.pad = 4;
  return data;
}

inline skd::DistillConfig quick_config(skd::Method method, int epochs = 1) {
  skd::DistillConfig cfg;
  cfg.method = method;
  cfg.epochs_per_stage = epochs;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.validate_each_epoch = false;
  return cfg;
}

/// Frozen teacher of the given depth for 2-class 32 px inputs.
inline skd::StagedNetwork frozen_teacher(int variant = 10, uint64_t seed = 11) {
  auto t = skd::build_resnet(variant, 2, seed);
  t->freeze_all();
  return t;
}

}  // namespace testing
