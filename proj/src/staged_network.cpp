#include "skd/errors.hpp"
#include "skd/model_zoo.hpp"

#include <sstream>

namespace skd {

namespace {

std::string shape_text(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

}  // namespace

StagedNetworkImpl::StagedNetworkImpl(TaskKind kind, int variant, int64_t num_classes)
    : kind_(kind), variant_(variant), num_classes_(num_classes), frozen_(kNumStages + 1, false) {
  if (!is_supported_variant(variant)) {
    resnet_block_counts(variant);  // throws with the list of valid variants
  }
  if (kind == TaskKind::classification && num_classes < 1) {
    throw ConfigError("num_classes must be positive, got " + std::to_string(num_classes));
  }
  if (kind == TaskKind::segmentation && num_classes < 2) {
    throw ConfigError("segmentation needs num_classes >= 2, got " + std::to_string(num_classes));
  }
  encoder = register_module("encoder", ResNetEncoder(variant));
  if (kind == TaskKind::classification) {
    fc = register_module("fc", torch::nn::Linear(kStageChannels[4], num_classes));
  } else {
    decoder = register_module("decoder", UNetDecoder(num_classes));
  }
}

void StagedNetworkImpl::check_input(Shape3 shape) const {
  if (shape.channels != 3) {
    throw ShapeError("expected 3 input channels, got " + std::to_string(shape.channels));
  }
  if (kind_ == TaskKind::segmentation) {
    if (shape.height % 32 != 0 || shape.width % 32 != 0 || shape.height == 0 || shape.width == 0) {
      throw ShapeError("U-Net input spatial dims must be positive multiples of 32, got " +
                       std::to_string(shape.height) + "x" + std::to_string(shape.width));
    }
  } else if (shape.height < 32 || shape.width < 32) {
    throw ShapeError("classifier input must be at least 32x32, got " + std::to_string(shape.height) +
                     "x" + std::to_string(shape.width));
  }
}

void StagedNetworkImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4) {
    throw ShapeError("expected a (batch, channels, height, width) input, got " + shape_text(x));
  }
  check_input(Shape3{x.size(1), x.size(2), x.size(3)});
}

EncoderOutput StagedNetworkImpl::encode(const torch::Tensor& x, int upto) {
  check_input(x);
  if (upto < 1 || upto > kNumStages) {
    throw ConfigError("encode upto stage " + std::to_string(upto) + " out of range");
  }
  return encoder->forward(x, upto);
}

torch::Tensor StagedNetworkImpl::forward_head(const EncoderOutput& enc) {
  if (enc.taps.size() != static_cast<std::size_t>(kNumStages)) {
    throw ShapeError("head needs all " + std::to_string(kNumStages) + " taps");
  }
  if (kind_ == TaskKind::classification) {
    auto pooled = torch::adaptive_avg_pool2d(enc.taps.back(), {1, 1}).flatten(1);
    return fc(pooled);
  }
  return decoder->forward(enc);
}

ForwardOutput StagedNetworkImpl::forward(const torch::Tensor& x) {
  auto enc = encode(x);
  ForwardOutput out;
  out.output = forward_head(enc);
  out.taps = std::move(enc.taps);
  return out;
}

std::vector<std::shared_ptr<torch::nn::Module>> StagedNetworkImpl::group_modules(StageId id) const {
  if (!id.is_head()) return encoder->stage_modules(id.index());
  if (kind_ == TaskKind::classification) return {fc.ptr()};
  return {decoder.ptr()};
}

std::vector<std::string> StagedNetworkImpl::group_module_names(StageId id) const {
  if (id.is_head()) {
    return {kind_ == TaskKind::classification ? "fc" : "decoder"};
  }
  if (id.index() == 1) return {"encoder.conv1", "encoder.bn1", "encoder.layer1"};
  return {"encoder.layer" + std::to_string(id.index())};
}

std::vector<torch::Tensor> StagedNetworkImpl::group_parameters(StageId id) const {
  std::vector<torch::Tensor> params;
  for (const auto& m : group_modules(id)) {
    for (const auto& p : m->parameters()) params.push_back(p);
  }
  return params;
}

std::vector<std::pair<std::string, torch::Tensor>> StagedNetworkImpl::group_state(StageId id) const {
  std::vector<std::pair<std::string, torch::Tensor>> state;
  const auto modules = group_modules(id);
  const auto names = group_module_names(id);
  for (std::size_t i = 0; i < modules.size(); ++i) {
    for (const auto& p : modules[i]->named_parameters()) {
      state.emplace_back(names[i] + "." + p.key(), p.value());
    }
    for (const auto& b : modules[i]->named_buffers()) {
      state.emplace_back(names[i] + "." + b.key(), b.value());
    }
  }
  return state;
}

std::vector<torch::Tensor> StagedNetworkImpl::trainable_parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto& id : all_groups()) {
    if (frozen_[id.group()]) continue;
    auto group = group_parameters(id);
    params.insert(params.end(), group.begin(), group.end());
  }
  return params;
}

void StagedNetworkImpl::apply_freeze() {
  for (const auto& id : all_groups()) {
    const bool frozen = frozen_[id.group()];
    for (auto& p : group_parameters(id)) p.requires_grad_(!frozen);
  }
  train(is_training());
}

void StagedNetworkImpl::train(bool on) {
  torch::nn::Module::train(on);
  for (const auto& id : all_groups()) {
    if (!frozen_[id.group()]) continue;
    for (const auto& m : group_modules(id)) m->eval();
  }
}

void StagedNetworkImpl::set_trainable(StageId id) {
  std::fill(frozen_.begin(), frozen_.end(), true);
  frozen_[id.group()] = false;
  apply_freeze();
}

void StagedNetworkImpl::set_trainable_all() {
  std::fill(frozen_.begin(), frozen_.end(), false);
  apply_freeze();
}

void StagedNetworkImpl::set_trainable_backbone() {
  std::fill(frozen_.begin(), frozen_.end(), false);
  frozen_[kNumStages] = true;
  apply_freeze();
}

void StagedNetworkImpl::freeze_all() {
  std::fill(frozen_.begin(), frozen_.end(), true);
  apply_freeze();
}

void StagedNetworkImpl::set_frozen_mask(const std::vector<bool>& mask) {
  if (mask.size() != frozen_.size()) {
    throw ConfigError("frozen mask must have " + std::to_string(frozen_.size()) + " entries");
  }
  frozen_ = mask;
  apply_freeze();
}

bool StagedNetworkImpl::is_fully_frozen() const {
  return std::all_of(frozen_.begin(), frozen_.end(), [](bool f) { return f; });
}

std::string StagedNetworkImpl::model_name() const {
  const std::string base = "resnet" + std::to_string(variant_);
  return kind_ == TaskKind::classification ? base : "unet_" + base;
}

}  // namespace skd
