#include "skd/data.hpp"

namespace skd {

namespace F = torch::nn::functional;

namespace {

torch::Tensor resize_image(const torch::Tensor& image, int64_t h, int64_t w) {
  if (image.size(1) == h && image.size(2) == w) return image;
  return F::interpolate(image.unsqueeze(0),
                        F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false))
      .squeeze(0)
      .clamp(0.0, 1.0);
}

torch::Tensor resize_mask(const torch::Tensor& mask, int64_t h, int64_t w) {
  if (mask.size(0) == h && mask.size(1) == w) return mask;
  auto m = mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  return F::interpolate(m, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kNearest))
      .squeeze(0)
      .squeeze(0)
      .to(torch::kInt64);
}

bool coin(std::mt19937_64& rng) { return std::uniform_int_distribution<int>(0, 1)(rng) == 1; }

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

}  // namespace

Sample augment(const Sample& input, TaskKind task, bool train_mode, const AugmentParams& params,
               std::mt19937_64& rng) {
  const int64_t r = params.resolution;
  if (!train_mode) {
    Sample out{resize_image(input.image, r, r), input.target};
    if (task == TaskKind::segmentation) out.target = resize_mask(input.target, r, r);
    return out;
  }

  if (task == TaskKind::classification) {
    auto image = resize_image(input.image, r, r);
    if (params.pad > 0) {
      image = F::pad(image, F::PadFuncOptions({params.pad, params.pad, params.pad, params.pad}));
      const int64_t y = uniform_int(rng, 0, 2 * params.pad);
      const int64_t x = uniform_int(rng, 0, 2 * params.pad);
      image = image.slice(1, y, y + r).slice(2, x, x + r);
    }
    if (coin(rng)) image = image.flip({2});
    return {image.contiguous(), input.target};
  }

  // Joint geometry: scale so the short side covers the crop, then one crop
  // window and one flip decision shared by image and mask.
  auto image = input.image;
  auto mask = input.target;
  const int64_t h = image.size(1), w = image.size(2);
  if (h < r || w < r) {
    const double scale = static_cast<double>(r) / static_cast<double>(std::min(h, w));
    const int64_t nh = std::max<int64_t>(r, static_cast<int64_t>(std::ceil(h * scale)));
    const int64_t nw = std::max<int64_t>(r, static_cast<int64_t>(std::ceil(w * scale)));
    image = resize_image(image, nh, nw);
    mask = resize_mask(mask, nh, nw);
  }
  const int64_t y = uniform_int(rng, 0, image.size(1) - r);
  const int64_t x = uniform_int(rng, 0, image.size(2) - r);
  image = image.slice(1, y, y + r).slice(2, x, x + r);
  mask = mask.slice(0, y, y + r).slice(1, x, x + r);
  if (coin(rng)) {
    image = image.flip({2});
    mask = mask.flip({1});
  }
  return {image.contiguous(), mask.contiguous()};
}

torch::Tensor normalize_images(const torch::Tensor& images) {
  auto mean = torch::tensor({0.485, 0.456, 0.406}, images.options()).view({3, 1, 1});
  auto stdev = torch::tensor({0.229, 0.224, 0.225}, images.options()).view({3, 1, 1});
  return (images - mean) / stdev;
}

}  // namespace skd
