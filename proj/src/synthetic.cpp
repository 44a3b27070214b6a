#include "synthetic.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <numbers>

namespace skd {

namespace {

// Oriented grating whose angle is drawn around class_index * pi / classes.
Sample texture_sample(const DatasetSpec& spec, int64_t label, std::mt19937_64& rng) {
  const int64_t n = spec.resolution;
  const double classes = static_cast<double>(spec.num_classes());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double spread = std::numbers::pi / classes;
  const double angle = label * spread + (unit(rng) - 0.5) * 0.6 * spread;
  const double freq = 2.0 + 3.0 * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double contrast = 0.25 + 0.25 * unit(rng);

  auto coords = torch::arange(n, torch::kFloat64) / static_cast<double>(n);
  auto yy = coords.view({n, 1}).expand({n, n});
  auto xx = coords.view({1, n}).expand({n, n});
  auto proj = xx * std::cos(angle) + yy * std::sin(angle);
  auto wave = torch::sin(2.0 * std::numbers::pi * freq * proj + phase);

  std::normal_distribution<double> normal(0.0, 1.0);
  auto image = torch::empty({3, n, n}, torch::kFloat64);
  for (int64_t c = 0; c < 3; ++c) {
    const double base = 0.3 + 0.4 * unit(rng);
    image[c] = base + contrast * wave;
  }
  auto noise_gen = at::make_generator<at::CPUGeneratorImpl>(rng());
  image += spec.noise * torch::randn({3, n, n}, noise_gen, torch::kFloat64);
  return {image.clamp(0.0, 1.0).to(torch::kFloat32), torch::tensor(label, torch::kInt64)};
}

// Background plus a few rectangles, each class with its own tint; the
// outline of every shape is void.
Sample shapes_sample(const DatasetSpec& spec, std::mt19937_64& rng) {
  const int64_t n = spec.resolution;
  const int64_t classes = spec.num_classes();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int64_t> pick_class(1, classes - 1);

  auto mask = torch::zeros({n, n}, torch::kInt64);
  const int shapes = 1 + static_cast<int>(unit(rng) * 3.0);
  for (int s = 0; s < shapes; ++s) {
    const int64_t cls = pick_class(rng);
    const int64_t h = std::max<int64_t>(4, static_cast<int64_t>(n * (0.2 + 0.3 * unit(rng))));
    const int64_t w = std::max<int64_t>(4, static_cast<int64_t>(n * (0.2 + 0.3 * unit(rng))));
    const int64_t y0 = static_cast<int64_t>(unit(rng) * static_cast<double>(n - h));
    const int64_t x0 = static_cast<int64_t>(unit(rng) * static_cast<double>(n - w));
    mask.slice(0, y0, y0 + h).slice(1, x0, x0 + w).fill_(cls);
    mask.slice(0, y0, y0 + h).slice(1, x0, x0 + 1).fill_(spec.ignore_index);
    mask.slice(0, y0, y0 + 1).slice(1, x0, x0 + w).fill_(spec.ignore_index);
  }

  auto image = torch::empty({3, n, n}, torch::kFloat64);
  auto valid = mask != spec.ignore_index;
  auto cls_map = torch::where(valid, mask, torch::zeros_like(mask)).to(torch::kFloat64);
  for (int64_t c = 0; c < 3; ++c) {
    // Per-class tint along a different direction for each channel.
    auto tint = torch::sin(cls_map * (1.3 + 0.7 * static_cast<double>(c))) * 0.35 + 0.5;
    image[c] = tint;
  }
  auto noise_gen = at::make_generator<at::CPUGeneratorImpl>(rng());
  image += spec.noise * 0.5 * torch::randn({3, n, n}, noise_gen, torch::kFloat64);
  return {image.clamp(0.0, 1.0).to(torch::kFloat32), mask};
}

}  // namespace

std::vector<Sample> generate_synthetic(const DatasetSpec& spec, Split split) {
  const auto count = spec.split_size(split);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  const uint64_t split_seed = mix_seed(spec.seed, static_cast<uint64_t>(split) + 1);
  for (int64_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(split_seed, static_cast<uint64_t>(i)));
    if (spec.task == TaskKind::classification) {
      samples.push_back(texture_sample(spec, i % spec.num_classes(), rng));
    } else {
      samples.push_back(shapes_sample(spec, rng));
    }
  }
  return samples;
}

}  // namespace skd
