#include "skd/model_zoo.hpp"

namespace skd {

namespace {

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(false));
}

}  // namespace

UpBlockImpl::UpBlockImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels) {
  const int64_t up_channels = in_channels / 2;
  up = register_module(
      "up", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in_channels, up_channels, 2).stride(2)));
  conv1 = register_module("conv1", conv3x3(up_channels + skip_channels, out_channels));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_channels));
  conv2 = register_module("conv2", conv3x3(out_channels, out_channels));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  auto h = torch::cat({up(x), skip}, 1);
  h = torch::relu(bn1(conv1(h)));
  return torch::relu(bn2(conv2(h)));
}

UNetDecoderImpl::UNetDecoderImpl(int64_t num_classes) {
  up4 = register_module("up4", UpBlock(kStageChannels[4], kStageChannels[3], 256));
  up3 = register_module("up3", UpBlock(256, kStageChannels[2], 128));
  up2 = register_module("up2", UpBlock(128, kStageChannels[1], 64));
  up1 = register_module("up1", UpBlock(64, kStageChannels[0], 64));
  up0 = register_module("up0", UpBlock(64, 3, 32));
  classifier = register_module("classifier", torch::nn::Conv2d(torch::nn::Conv2dOptions(32, num_classes, 1)));
}

torch::Tensor UNetDecoderImpl::forward(const EncoderOutput& enc) {
  auto h = up4(enc.taps[3], enc.taps[2]);
  h = up3(h, enc.taps[1]);
  h = up2(h, enc.taps[0]);
  h = up1(h, enc.stem);
  h = up0(h, enc.input);
  return classifier(h);
}

}  // namespace skd
