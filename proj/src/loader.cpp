#include "skd/data.hpp"
#include "skd/errors.hpp"

namespace skd {

BatchLoader::BatchLoader(DatasetPtr dataset, std::vector<std::size_t> indices, LoaderOptions options)
    : dataset_(std::move(dataset)), indices_(std::move(indices)), options_(options) {
  if (options_.batch_size < 1) throw ConfigError("batch_size must be positive");
  for (auto i : indices_) {
    if (i >= dataset_->size()) throw DataError("loader index " + std::to_string(i) + " out of range");
  }
}

// In train mode a trailing batch of one example is folded into the previous
// batch: batch-norm cannot normalise a single 1x1 activation.
std::size_t BatchLoader::num_batches() const {
  const auto n = indices_.size();
  const auto bs = static_cast<std::size_t>(options_.batch_size);
  auto batches = (n + bs - 1) / bs;
  if (options_.train_mode && batches > 1 && n % bs == 1) --batches;
  return batches;
}

std::vector<std::size_t> BatchLoader::epoch_order(int epoch) const {
  auto order = indices_;
  if (options_.shuffle) {
    std::mt19937_64 rng(mix_seed(options_.seed, static_cast<uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
  }
  return order;
}

Batch BatchLoader::batch(int epoch, std::size_t batch_index) const {
  const auto total = num_batches();
  if (batch_index >= total) throw DataError("batch index out of range");
  const auto order = epoch_order(epoch);
  const auto bs = static_cast<std::size_t>(options_.batch_size);
  const auto begin = batch_index * bs;
  const auto end = batch_index + 1 == total ? order.size() : std::min(order.size(), begin + bs);

  Batch out;
  std::vector<torch::Tensor> images, targets;
  const auto task = dataset_->spec().task;
  for (auto pos = begin; pos < end; ++pos) {
    const auto index = order[pos];
    std::mt19937_64 rng(mix_seed(mix_seed(options_.seed, static_cast<uint64_t>(epoch) + 0x51ED),
                                 static_cast<uint64_t>(index)));
    auto sample = augment(dataset_->get(index), task, options_.train_mode, options_.augment, rng);
    images.push_back(sample.image);
    targets.push_back(sample.target);
    out.indices.push_back(index);
  }
  out.images = normalize_images(torch::stack(images));
  out.targets = torch::stack(targets);
  return out;
}

}  // namespace skd
