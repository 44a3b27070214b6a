#pragma once

#include "skd/model_zoo.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace skd {

enum class Split { train, val, test };

std::string to_string(Split split);

/// Identity and layout of a dataset.
///
/// Named presets (see dataset_spec) carry the published split sizes; a
/// loaded split whose size disagrees is rejected while enforce_split_sizes
/// is set. A size of 0 marks a split that does not exist.
struct DatasetSpec {
  std::string name;
  TaskKind task = TaskKind::classification;
  std::array<int64_t, 3> split_sizes{0, 0, 0};  // train, val, test
  bool enforce_split_sizes = true;
  std::vector<std::string> class_names;
  int64_t ignore_index = 255;
  std::filesystem::path root;
  /// Side of the square network input (eval resize, train crop).
  int64_t resolution = 32;

  /// Synthetic generator controls.
  uint64_t seed = 0;
  double noise = 0.35;

  int64_t num_classes() const { return static_cast<int64_t>(class_names.size()); }
  int64_t split_size(Split split) const { return split_sizes[static_cast<std::size_t>(split)]; }
};

/// Presets: imagenette, imagewoof, cifar10, camvid (sizes from the published
/// split table, class inventories, default resolutions). `root` defaults to
/// $SKD_DATA_ROOT/<name>. Throws ConfigError for unknown names.
DatasetSpec dataset_spec(const std::string& name, std::filesystem::path root = {});

/// Balanced two-class texture task: oriented noisy gratings, class = dominant
/// orientation. Sizes are train/val counts.
DatasetSpec synthetic_classification_spec(int64_t train_size, int64_t val_size, int64_t resolution, uint64_t seed,
                                          int64_t num_classes = 2);

/// Toy segmentation: background plus axis-aligned shapes of num_classes-1
/// kinds, with a one-pixel void outline mapped to ignore_index.
DatasetSpec synthetic_segmentation_spec(int64_t train_size, int64_t val_size, int64_t resolution, uint64_t seed,
                                        int64_t num_classes = 3);

/// $SKD_DATA_ROOT or "./data".
std::filesystem::path data_root_from_env();

/// One example. image: float (3, H, W) in [0, 1]. target: int64 scalar
/// (classification) or int64 (H, W) mask.
struct Sample {
  torch::Tensor image;
  torch::Tensor target;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t index) const = 0;
  /// Stratum for fraction sampling: the class label for classification,
  /// 0 for segmentation.
  virtual int64_t stratum(std::size_t index) const = 0;
  virtual const DatasetSpec& spec() const = 0;
  virtual Split split() const = 0;
};

using DatasetPtr = std::shared_ptr<const Dataset>;

/// Opens one split. Layouts:
///  - synthetic / synthetic_seg: generated in memory from spec.seed;
///  - cifar10: root/data_batch_{1..5}.bin, root/test_batch.bin (val);
///  - camvid: root/{train,val,test} images + root/{train,val,test}annot masks;
///  - anything else: class-per-folder images under root/{train,val,test}.
/// Errors: MissingFileError, CorruptImageError, LabelCountMismatchError,
/// InvalidLabelError.
DatasetPtr load_dataset(const DatasetSpec& spec, Split split);

/// An in-memory dataset over prepared samples.
DatasetPtr make_tensor_dataset(DatasetSpec spec, Split split, std::vector<Sample> samples);

// ---------------------------------------------------------------------------
// Fraction sampling
// ---------------------------------------------------------------------------

struct FractionSample {
  std::string dataset;
  double fraction = 1.0;
  uint64_t seed = 0;
  std::vector<std::size_t> indices;  // ascending
};

/// Class-stratified subset of a training split. Each stratum of size n
/// contributes round(fraction * n) items (at least one when n > 0), so
/// counts never deviate from fraction * n by more than one. Within a
/// stratum the order is a seeded shuffle and the subset is its prefix, which
/// makes samples nested across fractions for a fixed seed.
/// Throws ConfigError for fractions outside (0, 1] and DataError for
/// non-train splits.
FractionSample sample_fraction(const Dataset& dataset, double fraction, uint64_t seed);

void save_fraction_sample(const FractionSample& sample, const std::filesystem::path& path);
FractionSample load_fraction_sample(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Augmentation and batching
// ---------------------------------------------------------------------------

struct AugmentParams {
  int64_t resolution = 32;
  int64_t pad = 4;
};

/// Train mode: classification resizes, zero-pads by `pad`, random-crops back
/// and flips horizontally with p = 0.5; segmentation applies one flip and
/// one crop to image and mask together (nearest-neighbour for masks).
/// Eval mode: deterministic resize to resolution x resolution.
Sample augment(const Sample& input, TaskKind task, bool train_mode, const AugmentParams& params,
               std::mt19937_64& rng);

/// Per-channel ImageNet mean/std normalisation of a (.., 3, H, W) tensor.
torch::Tensor normalize_images(const torch::Tensor& images);

struct LoaderOptions {
  int64_t batch_size = 16;
  bool train_mode = false;
  bool shuffle = false;
  uint64_t seed = 0;
  AugmentParams augment;
};

struct Batch {
  torch::Tensor images;   // normalised, (B, 3, R, R)
  torch::Tensor targets;  // (B) or (B, R, R)
  std::vector<std::size_t> indices;
};

/// Deterministic batching over a subset of a dataset. The order of epoch e
/// and the augmentation of each example depend only on (seed, e, index), so
/// batches can be produced in any order or concurrently.
class BatchLoader {
 public:
  BatchLoader(DatasetPtr dataset, std::vector<std::size_t> indices, LoaderOptions options);

  std::size_t num_batches() const;
  Batch batch(int epoch, std::size_t batch_index) const;
  std::vector<std::size_t> epoch_order(int epoch) const;

  const Dataset& dataset() const { return *dataset_; }
  const LoaderOptions& options() const { return options_; }
  std::size_t size() const { return indices_.size(); }

 private:
  DatasetPtr dataset_;
  std::vector<std::size_t> indices_;
  LoaderOptions options_;
};

/// All indices 0..n-1.
std::vector<std::size_t> all_indices(const Dataset& dataset);

/// SplitMix64 step, used to derive independent seeds.
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace skd
