#include "skd/errors.hpp"
#include "skd/model_zoo.hpp"

#include <algorithm>
#include <sstream>

namespace skd {

namespace F = torch::nn::functional;

namespace {

std::string valid_variants_text() {
  std::ostringstream os;
  for (std::size_t i = 0; i < kSupportedVariants.size(); ++i) {
    os << (i ? ", " : "") << kSupportedVariants[i];
  }
  return os.str();
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

}  // namespace

bool is_supported_variant(int variant) {
  return std::find(kSupportedVariants.begin(), kSupportedVariants.end(), variant) !=
         kSupportedVariants.end();
}

std::array<int, 4> resnet_block_counts(int variant) {
  switch (variant) {
    case 34: return {3, 4, 6, 3};
    case 26: return {3, 3, 3, 3};
    case 20: return {2, 2, 3, 2};
    case 18: return {2, 2, 2, 2};
    case 14: return {1, 1, 2, 2};
    case 10: return {1, 1, 1, 1};
    default:
      throw ConfigError("unsupported ResNet variant " + std::to_string(variant) +
                        "; valid variants are " + valid_variants_text());
  }
}

std::vector<StageSpec> resnet_stage_specs(int variant) {
  const auto blocks = resnet_block_counts(variant);
  std::vector<StageSpec> specs;
  specs.push_back({"conv1", 1, kStageChannels[0], true});
  specs.push_back({"conv2_x", blocks[0], kStageChannels[1], true});  // via maxpool
  for (int i = 1; i < 4; ++i) {
    specs.push_back({"conv" + std::to_string(i + 2) + "_x", blocks[i], kStageChannels[i + 1], true});
  }
  return specs;
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "segmentation";
}

TaskKind task_kind_from_string(const std::string& text) {
  if (text == "classification") return TaskKind::classification;
  if (text == "segmentation") return TaskKind::segmentation;
  throw ConfigError("unknown task '" + text + "'; expected classification or segmentation");
}

StageId StageId::stage(int one_based) {
  if (one_based < 1 || one_based > kNumStages) {
    throw ConfigError("stage index " + std::to_string(one_based) + " out of range [1, " +
                      std::to_string(kNumStages) + "]");
  }
  return StageId(one_based);
}

std::string StageId::name() const {
  return is_head() ? "head" : "stage" + std::to_string(index_);
}

std::vector<StageId> all_groups() {
  std::vector<StageId> ids;
  for (int s = 1; s <= kNumStages; ++s) ids.push_back(StageId::stage(s));
  ids.push_back(StageId::head());
  return ids;
}

BasicBlockImpl::BasicBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride) {
  conv1 = register_module("conv1", conv3x3(in_channels, out_channels, stride));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_channels));
  conv2 = register_module("conv2", conv3x3(out_channels, out_channels, 1));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    downsample = register_module(
        "downsample",
        torch::nn::Sequential(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)
                                  .stride(stride)
                                  .bias(false)),
            torch::nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = bn2(conv2(out));
  auto identity = downsample ? downsample->forward(x) : x;
  return torch::relu(out + identity);
}

ResNetEncoderImpl::ResNetEncoderImpl(int variant) : variant_(variant) {
  const auto blocks = resnet_block_counts(variant);
  conv1 = register_module(
      "conv1",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, kStageChannels[0], 7).stride(2).padding(3).bias(false)));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(kStageChannels[0]));
  int64_t in = kStageChannels[0];
  for (int s = 0; s < 4; ++s) {
    const int64_t out = kStageChannels[s + 1];
    torch::nn::Sequential layer;
    for (int b = 0; b < blocks[s]; ++b) {
      const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
      layer->push_back(BasicBlock(b == 0 ? in : out, out, stride));
    }
    layers[s] = register_module("layer" + std::to_string(s + 1), layer);
    in = out;
  }
}

EncoderOutput ResNetEncoderImpl::forward(const torch::Tensor& x, int upto) {
  EncoderOutput out;
  out.input = x;
  out.stem = torch::relu(bn1(conv1(x)));
  auto h = F::max_pool2d(out.stem, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  for (int s = 0; s < upto; ++s) {
    h = layers[s]->forward(h);
    out.taps.push_back(h);
  }
  return out;
}

std::vector<std::shared_ptr<torch::nn::Module>> ResNetEncoderImpl::stage_modules(int one_based) const {
  if (one_based == 1) {
    return {conv1.ptr(), bn1.ptr(), layers[0].ptr()};
  }
  return {layers[one_based - 1].ptr()};
}

}  // namespace skd
