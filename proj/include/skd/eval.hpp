#pragma once

#include "skd/data.hpp"
#include "skd/model_zoo.hpp"

#include <torch/torch.h>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace skd {

/// Integer confusion counts: rows are ground truth, columns predictions.
/// Items labelled ignore_index are skipped and tallied separately.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t num_classes, int64_t ignore_index = -1);

  void add(int64_t label, int64_t prediction);
  /// Accumulates equally-shaped integer tensors of predictions and labels.
  void add(const torch::Tensor& predictions, const torch::Tensor& labels);
  /// Elementwise sum; associative and commutative.
  void merge(const ConfusionMatrix& other);

  int64_t num_classes() const { return num_classes_; }
  int64_t ignore_index() const { return ignore_index_; }
  int64_t count(int64_t label, int64_t prediction) const;
  int64_t total() const;
  int64_t ignored() const { return ignored_; }

  /// TP / (TP + FP + FN) per class; nullopt when the class appears in
  /// neither ground truth nor prediction.
  std::vector<std::optional<double>> per_class_iou() const;
  /// Mean over classes present in ground truth or prediction. Throws
  /// MetricError when nothing was counted.
  double mean_iou() const;
  /// Trace / total. Throws MetricError when nothing was counted.
  double accuracy() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int64_t num_classes_;
  int64_t ignore_index_;
  std::vector<int64_t> counts_;
  int64_t ignored_ = 0;
};

/// Fraction of positions where prediction equals label. Throws MetricError
/// on empty input and ShapeError on length mismatch.
double top1_accuracy(std::span<const int64_t> predictions, std::span<const int64_t> labels);
double top1_accuracy(const torch::Tensor& predictions, const torch::Tensor& labels);

/// Dataset-level mean IoU over the given masks (any matching shapes).
double mean_iou(const torch::Tensor& predictions, const torch::Tensor& labels, int64_t num_classes,
                int64_t ignore_index);

/// Label of every class absent from ground truth and prediction is left out
/// of the mean; this text is written into reports.
inline constexpr const char* kIouConvention =
    "dataset-level confusion matrix; ignore_index pixels excluded; classes absent from both prediction and "
    "ground truth are excluded from the mean";

struct EvalResult {
  std::string metric;  // "top1_accuracy" or "mean_iou"
  double value = 0.0;
  ConfusionMatrix confusion{2};
};

/// Runs the network in eval mode over a split (deterministic resize, no
/// augmentation) and accumulates the task metric.
EvalResult evaluate(StagedNetwork& net, const DatasetPtr& dataset, int64_t resolution, int64_t batch_size = 32);

}  // namespace skd
