#include "skd/eval.hpp"

#include "skd/errors.hpp"

namespace skd {

ConfusionMatrix::ConfusionMatrix(int64_t num_classes, int64_t ignore_index)
    : num_classes_(num_classes), ignore_index_(ignore_index) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(num_classes * num_classes), 0);
}

void ConfusionMatrix::add(int64_t label, int64_t prediction) {
  if (label == ignore_index_) {
    ++ignored_;
    return;
  }
  if (label < 0 || label >= num_classes_) {
    throw InvalidLabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes_) + ")");
  }
  if (prediction < 0 || prediction >= num_classes_) {
    throw InvalidLabelError("prediction " + std::to_string(prediction) + " outside [0, " +
                            std::to_string(num_classes_) + ")");
  }
  ++counts_[static_cast<std::size_t>(label * num_classes_ + prediction)];
}

void ConfusionMatrix::add(const torch::Tensor& predictions, const torch::Tensor& labels) {
  if (predictions.sizes() != labels.sizes()) {
    throw ShapeError("predictions and labels differ in shape");
  }
  auto p = predictions.to(torch::kInt64).contiguous().flatten();
  auto l = labels.to(torch::kInt64).contiguous().flatten();
  auto valid = l != ignore_index_;
  const auto n_valid = valid.sum().item<int64_t>();
  ignored_ += l.numel() - n_valid;
  if (n_valid == 0) return;
  auto lv = l.masked_select(valid);
  auto pv = p.masked_select(valid);
  if (lv.min().item<int64_t>() < 0 || lv.max().item<int64_t>() >= num_classes_) {
    throw InvalidLabelError("label outside [0, " + std::to_string(num_classes_) + ") and not ignore_index");
  }
  if (pv.min().item<int64_t>() < 0 || pv.max().item<int64_t>() >= num_classes_) {
    throw InvalidLabelError("prediction outside [0, " + std::to_string(num_classes_) + ")");
  }
  auto bins = torch::bincount(lv * num_classes_ + pv, /*weights=*/{}, num_classes_ * num_classes_);
  auto acc = bins.accessor<int64_t, 1>();
  for (int64_t i = 0; i < num_classes_ * num_classes_; ++i) counts_[static_cast<std::size_t>(i)] += acc[i];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_ || other.ignore_index_ != ignore_index_) {
    throw ShapeError("cannot merge confusion matrices of different layouts");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  ignored_ += other.ignored_;
}

int64_t ConfusionMatrix::count(int64_t label, int64_t prediction) const {
  return counts_.at(static_cast<std::size_t>(label * num_classes_ + prediction));
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> iou(static_cast<std::size_t>(num_classes_));
  for (int64_t k = 0; k < num_classes_; ++k) {
    int64_t row = 0, col = 0;
    for (int64_t j = 0; j < num_classes_; ++j) {
      row += count(k, j);
      col += count(j, k);
    }
    const int64_t tp = count(k, k);
    const int64_t uni = row + col - tp;
    if (uni > 0) iou[static_cast<std::size_t>(k)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0.0;
  int present = 0;
  for (const auto& v : per_class_iou()) {
    if (!v) continue;
    sum += *v;
    ++present;
  }
  if (present == 0) throw MetricError("mean IoU undefined: no counted pixels");
  return sum / present;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  if (t == 0) throw MetricError("accuracy undefined: no counted items");
  int64_t diag = 0;
  for (int64_t k = 0; k < num_classes_; ++k) diag += count(k, k);
  return static_cast<double>(diag) / static_cast<double>(t);
}

double top1_accuracy(std::span<const int64_t> predictions, std::span<const int64_t> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("top1_accuracy: length mismatch");
  if (predictions.empty()) throw MetricError("top1_accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double top1_accuracy(const torch::Tensor& predictions, const torch::Tensor& labels) {
  auto p = predictions.to(torch::kInt64).contiguous().flatten();
  auto l = labels.to(torch::kInt64).contiguous().flatten();
  return top1_accuracy(std::span<const int64_t>(p.data_ptr<int64_t>(), static_cast<std::size_t>(p.numel())),
                       std::span<const int64_t>(l.data_ptr<int64_t>(), static_cast<std::size_t>(l.numel())));
}

double mean_iou(const torch::Tensor& predictions, const torch::Tensor& labels, int64_t num_classes,
                int64_t ignore_index) {
  ConfusionMatrix cm(num_classes, ignore_index);
  cm.add(predictions, labels);
  return cm.mean_iou();
}

EvalResult evaluate(StagedNetwork& net, const DatasetPtr& dataset, int64_t resolution, int64_t batch_size) {
  const bool was_training = net->is_training();
  net->eval();
  torch::NoGradGuard no_grad;

  const auto& spec = dataset->spec();
  LoaderOptions opts;
  opts.batch_size = batch_size;
  opts.train_mode = false;
  opts.augment.resolution = resolution;
  BatchLoader loader(dataset, all_indices(*dataset), opts);

  EvalResult result;
  result.confusion = ConfusionMatrix(net->num_classes(), spec.ignore_index);
  for (std::size_t b = 0; b < loader.num_batches(); ++b) {
    auto batch = loader.batch(0, b);
    auto logits = net->forward(batch.images).output;
    result.confusion.add(logits.argmax(1), batch.targets);
  }
  if (spec.task == TaskKind::classification) {
    result.metric = "top1_accuracy";
    result.value = result.confusion.accuracy();
  } else {
    result.metric = "mean_iou";
    result.value = result.confusion.mean_iou();
  }
  net->train(was_training);
  return result;
}

}  // namespace skd
