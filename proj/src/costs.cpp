#include "skd/model_zoo.hpp"

#include <stdexcept>

namespace skd {

namespace {

int64_t numel_of(const torch::Tensor& t) { return t.defined() ? t.numel() : 0; }

Shape3 conv_cost(CostTrace& trace, const std::string& name, const torch::nn::Conv2dImpl& conv, Shape3 in) {
  const auto& o = conv.options;
  const int64_t kh = o.kernel_size()->at(0), kw = o.kernel_size()->at(1);
  const int64_t sh = o.stride()->at(0), sw = o.stride()->at(1);
  const auto& pad = std::get<torch::ExpandingArray<2>>(o.padding());
  Shape3 out{o.out_channels(), (in.height + 2 * pad->at(0) - kh) / sh + 1,
             (in.width + 2 * pad->at(1) - kw) / sw + 1};
  const int64_t macs = out.channels * out.height * out.width * (in.channels / o.groups()) * kh * kw;
  trace.add({name, "conv", numel_of(conv.weight) + numel_of(conv.bias), macs, out});
  return out;
}

Shape3 deconv_cost(CostTrace& trace, const std::string& name, const torch::nn::ConvTranspose2dImpl& conv,
                   Shape3 in) {
  const auto& o = conv.options;
  const int64_t kh = o.kernel_size()->at(0), kw = o.kernel_size()->at(1);
  const int64_t sh = o.stride()->at(0), sw = o.stride()->at(1);
  const auto& pad = std::get<torch::ExpandingArray<2>>(o.padding());
  const int64_t ph = pad->at(0), pw = pad->at(1);
  Shape3 out{o.out_channels(), (in.height - 1) * sh - 2 * ph + kh, (in.width - 1) * sw - 2 * pw + kw};
  const int64_t macs = in.channels * in.height * in.width * o.out_channels() * kh * kw;
  trace.add({name, "conv_transpose", numel_of(conv.weight) + numel_of(conv.bias), macs, out});
  return out;
}

// Inference-time affine: one multiply-add per element.
Shape3 bn_cost(CostTrace& trace, const std::string& name, const torch::nn::BatchNorm2dImpl& bn, Shape3 in) {
  trace.add({name, "batch_norm", numel_of(bn.weight) + numel_of(bn.bias), in.channels * in.height * in.width, in});
  return in;
}

}  // namespace

Shape3 BasicBlockImpl::cost(CostTrace& trace, const std::string& prefix, Shape3 in) const {
  auto h = conv_cost(trace, prefix + ".conv1", *conv1, in);
  h = bn_cost(trace, prefix + ".bn1", *bn1, h);
  h = conv_cost(trace, prefix + ".conv2", *conv2, h);
  h = bn_cost(trace, prefix + ".bn2", *bn2, h);
  if (downsample) {
    auto d = conv_cost(trace, prefix + ".downsample.0", *downsample->ptr(0)->as<torch::nn::Conv2d>(), in);
    bn_cost(trace, prefix + ".downsample.1", *downsample->ptr(1)->as<torch::nn::BatchNorm2d>(), d);
  }
  return h;
}

Shape3 ResNetEncoderImpl::cost(CostTrace& trace, Shape3 in) const {
  auto h = conv_cost(trace, "encoder.conv1", *conv1, in);
  h = bn_cost(trace, "encoder.bn1", *bn1, h);
  h = Shape3{h.channels, (h.height + 2 - 3) / 2 + 1, (h.width + 2 - 3) / 2 + 1};
  trace.add({"encoder.maxpool", "max_pool", 0, 0, h});
  for (int s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < layers[s]->size(); ++b) {
      const auto prefix = "encoder.layer" + std::to_string(s + 1) + "." + std::to_string(b);
      h = layers[s]->ptr(b)->as<BasicBlock>()->cost(trace, prefix, h);
    }
  }
  return h;
}

Shape3 UpBlockImpl::cost(CostTrace& trace, const std::string& prefix, Shape3 in, Shape3 skip) const {
  auto h = deconv_cost(trace, prefix + ".up", *up, in);
  h.channels += skip.channels;
  h = conv_cost(trace, prefix + ".conv1", *conv1, h);
  h = bn_cost(trace, prefix + ".bn1", *bn1, h);
  h = conv_cost(trace, prefix + ".conv2", *conv2, h);
  return bn_cost(trace, prefix + ".bn2", *bn2, h);
}

Shape3 UNetDecoderImpl::cost(CostTrace& trace, Shape3 input) const {
  auto at_scale = [&](int64_t channels, int64_t divisor) {
    return Shape3{channels, input.height / divisor, input.width / divisor};
  };
  auto h = up4->cost(trace, "decoder.up4", at_scale(kStageChannels[4], 32), at_scale(kStageChannels[3], 16));
  h = up3->cost(trace, "decoder.up3", h, at_scale(kStageChannels[2], 8));
  h = up2->cost(trace, "decoder.up2", h, at_scale(kStageChannels[1], 4));
  h = up1->cost(trace, "decoder.up1", h, at_scale(kStageChannels[0], 2));
  h = up0->cost(trace, "decoder.up0", h, input);
  return conv_cost(trace, "decoder.classifier", *classifier, h);
}

Shape3 StagedNetworkImpl::cost(CostTrace& trace, Shape3 in) const {
  auto h = encoder->cost(trace, in);
  if (kind_ == TaskKind::classification) {
    trace.add({"avgpool", "avg_pool", 0, 0, Shape3{h.channels, 1, 1}});
    const int64_t out = fc->options.out_features();
    trace.add({"fc", "linear", numel_of(fc->weight) + numel_of(fc->bias), fc->options.in_features() * out,
               Shape3{out, 1, 1}});
    return Shape3{out, 1, 1};
  }
  return decoder->cost(trace, in);
}

ParamFlopReport count_params_flops(const StagedNetwork& net, Shape3 input_shape) {
  net->check_input(input_shape);
  CostTrace trace;
  net->cost(trace, input_shape);

  ParamFlopReport report;
  report.input_shape = input_shape;
  report.layers = trace.layers();
  int64_t traced_params = 0;
  for (const auto& layer : report.layers) {
    traced_params += layer.params;
    report.mac_count += layer.macs;
  }
  for (const auto& p : net->parameters()) report.parameter_count += p.numel();
  if (traced_params != report.parameter_count) {
    throw std::logic_error("cost trace covers " + std::to_string(traced_params) + " parameters but the module has " +
                           std::to_string(report.parameter_count));
  }
  report.flop_count = 2 * report.mac_count;
  report.flop_convention =
      "flops = 2 x multiply-adds; counted layers: conv, transposed conv, linear, batch-norm affine "
      "(1 multiply-add per element); activations, pooling and residual additions are not counted";
  return report;
}

}  // namespace skd
