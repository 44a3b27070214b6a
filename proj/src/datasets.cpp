#include "skd/data.hpp"
#include "skd/errors.hpp"
#include "synthetic.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>

namespace skd {

namespace fs = std::filesystem;

namespace {

constexpr int64_t kCifarImageBytes = 3 * 32 * 32;
constexpr int64_t kCifarRecordBytes = 1 + kCifarImageBytes;

const std::vector<std::string>& image_extensions() {
  static const std::vector<std::string> exts = {".jpg", ".jpeg", ".png", ".ppm", ".pgm", ".bmp", ".tif", ".tiff"};
  return exts;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::find(image_extensions().begin(), image_extensions().end(), ext) != image_extensions().end();
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void require_dir(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw MissingFileError(what + " directory not found: " + dir.string());
}

torch::Tensor read_image(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw CorruptImageError("cannot decode image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

torch::Tensor read_mask(const fs::path& path, int64_t num_classes, int64_t ignore_index) {
  if (!fs::exists(path)) throw MissingFileError("mask not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw CorruptImageError("cannot decode mask: " + path.string());
  auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).to(torch::kInt64);
  return torch::where(t >= num_classes, torch::full_like(t, ignore_index), t);
}

void check_split_size(const DatasetSpec& spec, Split split, std::size_t actual) {
  const auto expected = spec.split_size(split);
  if (spec.enforce_split_sizes && expected > 0 && static_cast<int64_t>(actual) != expected) {
    throw LabelCountMismatchError(spec.name + " " + to_string(split) + " split has " + std::to_string(actual) +
                                  " items, expected " + std::to_string(expected));
  }
}

class DatasetBase : public Dataset {
 public:
  DatasetBase(DatasetSpec spec, Split split) : spec_(std::move(spec)), split_(split) {}
  const DatasetSpec& spec() const override { return spec_; }
  Split split() const override { return split_; }

 protected:
  DatasetSpec spec_;
  Split split_;
};

class TensorDataset final : public DatasetBase {
 public:
  TensorDataset(DatasetSpec spec, Split split, std::vector<Sample> samples)
      : DatasetBase(std::move(spec), split), samples_(std::move(samples)) {
    for (const auto& s : samples_) {
      strata_.push_back(spec_.task == TaskKind::classification ? s.target.item<int64_t>() : 0);
    }
  }
  std::size_t size() const override { return samples_.size(); }
  Sample get(std::size_t i) const override { return samples_.at(i); }
  int64_t stratum(std::size_t i) const override { return strata_.at(i); }

 private:
  std::vector<Sample> samples_;
  std::vector<int64_t> strata_;
};

class FolderDataset final : public DatasetBase {
 public:
  FolderDataset(DatasetSpec spec, Split split) : DatasetBase(std::move(spec), split) {
    const auto dir = spec_.root / to_string(split_);
    require_dir(dir, spec_.name + " " + to_string(split_));
    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
    if (!spec_.class_names.empty() && classes.size() != spec_.class_names.size()) {
      throw LabelCountMismatchError(dir.string() + " has " + std::to_string(classes.size()) +
                                    " class folders, expected " + std::to_string(spec_.class_names.size()));
    }
    if (spec_.class_names.empty()) spec_.class_names = classes;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      for (auto& file : sorted_images(dir / classes[c])) {
        files_.push_back(std::move(file));
        labels_.push_back(static_cast<int64_t>(c));
      }
    }
    check_split_size(spec_, split_, files_.size());
  }

  std::size_t size() const override { return files_.size(); }
  Sample get(std::size_t i) const override {
    return {read_image(files_.at(i)), torch::tensor(labels_.at(i), torch::kInt64)};
  }
  int64_t stratum(std::size_t i) const override { return labels_.at(i); }

 private:
  std::vector<fs::path> files_;
  std::vector<int64_t> labels_;
};

class CifarDataset final : public DatasetBase {
 public:
  CifarDataset(DatasetSpec spec, Split split) : DatasetBase(std::move(spec), split) {
    std::vector<std::string> names;
    if (split_ == Split::train) {
      for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else if (split_ == Split::val) {
      names.push_back("test_batch.bin");
    } else {
      throw DataError("cifar10 has no test split");
    }
    for (const auto& name : names) {
      const auto path = spec_.root / name;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw MissingFileError("CIFAR-10 batch not found: " + path.string());
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (bytes.size() % kCifarRecordBytes != 0) {
        throw LabelCountMismatchError(path.string() + " is not a whole number of label+image records");
      }
      const auto records = static_cast<int64_t>(bytes.size()) / kCifarRecordBytes;
      for (int64_t r = 0; r < records; ++r) {
        const auto label = static_cast<unsigned char>(bytes[r * kCifarRecordBytes]);
        if (label >= spec_.class_names.size()) {
          throw InvalidLabelError(path.string() + ": record " + std::to_string(r) + " has label " +
                                  std::to_string(label));
        }
        entries_.push_back({files_.size(), r * kCifarRecordBytes});
        labels_.push_back(label);
      }
      files_.push_back(path);
    }
    check_split_size(spec_, split_, labels_.size());
  }

  std::size_t size() const override { return labels_.size(); }
  Sample get(std::size_t i) const override {
    const auto& [file, offset] = entries_.at(i);
    std::ifstream in(files_[file], std::ios::binary);
    if (!in) throw MissingFileError("CIFAR-10 batch disappeared: " + files_[file].string());
    std::vector<unsigned char> buf(kCifarImageBytes);
    in.seekg(offset + 1);
    if (!in.read(reinterpret_cast<char*>(buf.data()), kCifarImageBytes)) {
      throw CorruptImageError("truncated CIFAR-10 record in " + files_[file].string());
    }
    auto image = torch::from_blob(buf.data(), {3, 32, 32}, torch::kUInt8).to(torch::kFloat32).div_(255.0);
    return {image, torch::tensor(labels_[i], torch::kInt64)};
  }
  int64_t stratum(std::size_t i) const override { return labels_.at(i); }

 private:
  std::vector<fs::path> files_;
  std::vector<std::pair<std::size_t, int64_t>> entries_;
  std::vector<int64_t> labels_;
};

class CamVidDataset final : public DatasetBase {
 public:
  CamVidDataset(DatasetSpec spec, Split split) : DatasetBase(std::move(spec), split) {
    const auto image_dir = spec_.root / to_string(split_);
    const auto mask_dir = spec_.root / (to_string(split_) + "annot");
    require_dir(image_dir, "CamVid images");
    require_dir(mask_dir, "CamVid masks");
    images_ = sorted_images(image_dir);
    auto masks = sorted_images(mask_dir);
    if (images_.size() != masks.size()) {
      throw LabelCountMismatchError(image_dir.string() + " has " + std::to_string(images_.size()) + " images but " +
                                    mask_dir.string() + " has " + std::to_string(masks.size()) + " masks");
    }
    std::map<std::string, fs::path> by_stem;
    for (const auto& m : masks) by_stem[m.stem().string()] = m;
    for (const auto& img : images_) {
      auto it = by_stem.find(img.stem().string());
      if (it == by_stem.end()) throw MissingFileError("no mask for image " + img.string());
      masks_.push_back(it->second);
    }
    check_split_size(spec_, split_, images_.size());
  }

  std::size_t size() const override { return images_.size(); }
  Sample get(std::size_t i) const override {
    auto image = read_image(images_.at(i));
    auto mask = read_mask(masks_.at(i), spec_.num_classes(), spec_.ignore_index);
    if (image.size(1) != mask.size(0) || image.size(2) != mask.size(1)) {
      throw LabelCountMismatchError("image/mask size mismatch for " + images_[i].string());
    }
    return {image, mask};
  }
  int64_t stratum(std::size_t) const override { return 0; }

 private:
  std::vector<fs::path> images_;
  std::vector<fs::path> masks_;
};

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

fs::path data_root_from_env() {
  if (const char* env = std::getenv("SKD_DATA_ROOT"); env && *env) return fs::path(env);
  return fs::path("data");
}

DatasetSpec dataset_spec(const std::string& name, fs::path root) {
  DatasetSpec spec;
  spec.name = name;
  spec.root = root.empty() ? data_root_from_env() / name : std::move(root);
  if (name == "imagenette") {
    spec.split_sizes = {13000, 500, 0};
    spec.class_names = {"tench",    "English springer", "cassette player", "chain saw", "church",
                        "French horn", "garbage truck", "gas pump",        "golf ball", "parachute"};
    spec.resolution = 224;
  } else if (name == "imagewoof") {
    spec.split_sizes = {13000, 500, 0};
    spec.class_names = {"Australian terrier", "Border terrier",   "Samoyed", "Beagle",          "Shih-Tzu",
                        "English foxhound",   "Rhodesian ridgeback", "Dingo", "Golden retriever", "Old English sheepdog"};
    spec.resolution = 224;
  } else if (name == "cifar10") {
    spec.split_sizes = {50000, 10000, 0};
    spec.class_names = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
    spec.resolution = 32;
  } else if (name == "camvid") {
    spec.task = TaskKind::segmentation;
    spec.split_sizes = {367, 101, 233};
    spec.class_names = {"Sky", "Building", "Pole", "Road", "Pavement", "Tree",
                        "SignSymbol", "Fence", "Car", "Pedestrian", "Bicyclist"};
    spec.resolution = 224;
  } else {
    throw ConfigError("unknown dataset preset '" + name +
                      "'; known presets: imagenette, imagewoof, cifar10, camvid, synthetic, synthetic_seg");
  }
  return spec;
}

DatasetSpec synthetic_classification_spec(int64_t train_size, int64_t val_size, int64_t resolution, uint64_t seed,
                                          int64_t num_classes) {
  if (num_classes < 2) throw ConfigError("synthetic classification needs at least 2 classes");
  DatasetSpec spec;
  spec.name = "synthetic";
  spec.task = TaskKind::classification;
  spec.split_sizes = {train_size, val_size, 0};
  for (int64_t c = 0; c < num_classes; ++c) spec.class_names.push_back("orientation" + std::to_string(c));
  spec.resolution = resolution;
  spec.seed = seed;
  return spec;
}

DatasetSpec synthetic_segmentation_spec(int64_t train_size, int64_t val_size, int64_t resolution, uint64_t seed,
                                        int64_t num_classes) {
  if (num_classes < 2) throw ConfigError("synthetic segmentation needs at least 2 classes");
  DatasetSpec spec;
  spec.name = "synthetic_seg";
  spec.task = TaskKind::segmentation;
  spec.split_sizes = {train_size, val_size, 0};
  spec.class_names.push_back("background");
  for (int64_t c = 1; c < num_classes; ++c) spec.class_names.push_back("shape" + std::to_string(c));
  spec.resolution = resolution;
  spec.seed = seed;
  return spec;
}

DatasetPtr make_tensor_dataset(DatasetSpec spec, Split split, std::vector<Sample> samples) {
  return std::make_shared<TensorDataset>(std::move(spec), split, std::move(samples));
}

DatasetPtr load_dataset(const DatasetSpec& spec, Split split) {
  if (spec.class_names.empty() && spec.task == TaskKind::segmentation) {
    throw ConfigError("segmentation dataset '" + spec.name + "' declares no classes");
  }
  if (spec.name == "synthetic" || spec.name == "synthetic_seg") {
    if (spec.split_size(split) <= 0) throw DataError(spec.name + " has no " + to_string(split) + " split");
    return make_tensor_dataset(spec, split, generate_synthetic(spec, split));
  }
  if (spec.split_sizes[static_cast<std::size_t>(split)] == 0 && spec.enforce_split_sizes &&
      spec.split_sizes != std::array<int64_t, 3>{0, 0, 0}) {
    throw DataError(spec.name + " has no " + to_string(split) + " split");
  }
  if (!fs::exists(spec.root)) throw MissingFileError("dataset root not found: " + spec.root.string());
  if (spec.name == "cifar10") return std::make_shared<CifarDataset>(spec, split);
  if (spec.task == TaskKind::segmentation) return std::make_shared<CamVidDataset>(spec, split);
  return std::make_shared<FolderDataset>(spec, split);
}

std::vector<std::size_t> all_indices(const Dataset& dataset) {
  std::vector<std::size_t> idx(dataset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace skd
