#include "skd/errors.hpp"
#include "skd/model_zoo.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace skd {

namespace {

void fill_normal(torch::Tensor& t, double stddev, at::Generator& gen) {
  t.copy_(torch::normal(0.0, stddev, t.sizes(), gen, t.options()));
}

void fill_uniform(torch::Tensor& t, double bound, at::Generator& gen) {
  t.copy_(torch::rand(t.sizes(), gen, t.options()) * (2.0 * bound) - bound);
}

// He-normal (fan-out, ReLU gain) for convolutions, BN scale 1 / shift 0,
// fan-in uniform for the linear classifier.
void initialize(StagedNetworkImpl& net, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (const auto& module : net.modules(/*include_self=*/false)) {
    if (auto* conv = module->as<torch::nn::Conv2d>()) {
      const auto& k = conv->options.kernel_size();
      const double fan_out = static_cast<double>(conv->options.out_channels() * k->at(0) * k->at(1));
      fill_normal(conv->weight, std::sqrt(2.0 / fan_out), gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* deconv = module->as<torch::nn::ConvTranspose2d>()) {
      const auto& k = deconv->options.kernel_size();
      const double fan_out = static_cast<double>(deconv->options.out_channels() * k->at(0) * k->at(1));
      fill_normal(deconv->weight, std::sqrt(2.0 / fan_out), gen);
      if (deconv->bias.defined()) deconv->bias.zero_();
    } else if (auto* bn = module->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    } else if (auto* linear = module->as<torch::nn::Linear>()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(linear->options.in_features()));
      fill_uniform(linear->weight, bound, gen);
      fill_uniform(linear->bias, bound, gen);
    }
  }
}

}  // namespace

StagedNetwork build_network(TaskKind kind, int variant, int64_t num_classes, uint64_t seed) {
  StagedNetwork net(kind, variant, num_classes);
  initialize(*net, seed);
  net->set_trainable_all();
  return net;
}

StagedNetwork build_resnet(int variant, int64_t num_classes, uint64_t seed) {
  return build_network(TaskKind::classification, variant, num_classes, seed);
}

StagedNetwork build_unet(int encoder_variant, int64_t num_classes, uint64_t seed) {
  return build_network(TaskKind::segmentation, encoder_variant, num_classes, seed);
}

StagedNetwork set_trainable_stage(StagedNetwork net, StageId id) {
  net->set_trainable(id);
  return net;
}

void copy_weights(const StagedNetwork& src, StagedNetwork& dst) {
  if (src->kind() != dst->kind() || src->variant() != dst->variant() ||
      src->num_classes() != dst->num_classes()) {
    throw ShapeError("copy_weights: architecture mismatch between " + src->model_name() + " and " +
                     dst->model_name());
  }
  torch::NoGradGuard no_grad;
  auto src_params = src->named_parameters();
  for (auto& p : dst->named_parameters()) p.value().copy_(src_params[p.key()]);
  auto src_buffers = src->named_buffers();
  for (auto& b : dst->named_buffers()) b.value().copy_(src_buffers[b.key()]);
}

StagedNetwork clone_network(const StagedNetwork& net) {
  StagedNetwork copy(net->kind(), net->variant(), net->num_classes());
  copy_weights(net, copy);
  copy->set_frozen_mask(net->frozen_mask());
  copy->train(net->is_training());
  return copy;
}

}  // namespace skd
