#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace skd {

enum class TaskKind { classification, segmentation };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& text);

/// Number of tapped distillation stages. conv1 and the max-pool are folded
/// into stage 1 together with conv2_x.
inline constexpr int kNumStages = 4;

/// Channel ladder shared by every variant, conv1..conv5_x.
inline constexpr std::array<int64_t, 5> kStageChannels = {64, 64, 128, 256, 512};

/// Residual variants from the architecture table.
inline constexpr std::array<int, 6> kSupportedVariants = {10, 14, 18, 20, 26, 34};

struct StageSpec {
  std::string name;  // conv1, conv2_x, ..., conv5_x
  int block_count = 1;
  int64_t channels = 64;
  bool downsample = false;
};

/// Layer table for a variant: five entries conv1..conv5_x. conv1 carries
/// block_count 1 (the 7x7 stem). Throws ConfigError on unknown variants.
std::vector<StageSpec> resnet_stage_specs(int variant);

/// Block counts (conv2_x..conv5_x) for a variant.
std::array<int, 4> resnet_block_counts(int variant);

bool is_supported_variant(int variant);

/// Selects a trainable parameter group: one of the 1-based stages or the
/// head (classifier, or decoder + pixel classifier for U-Nets).
class StageId {
 public:
  static StageId stage(int one_based);
  static StageId head() { return StageId(0); }

  bool is_head() const { return index_ == 0; }
  /// 1-based stage index; 0 for the head.
  int index() const { return index_; }
  /// Position in the frozen mask: stages 0..N-1, head N.
  int group() const { return is_head() ? kNumStages : index_ - 1; }

  std::string name() const;

  friend bool operator==(StageId, StageId) = default;

 private:
  explicit StageId(int index) : index_(index) {}
  int index_;
};

/// (channels, height, width) of one input example.
struct Shape3 {
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Cost of one primitive layer, in forward order.
struct LayerCost {
  std::string name;
  std::string kind;
  int64_t params = 0;
  int64_t macs = 0;
  Shape3 output;
};

/// Accumulates per-layer costs while a network walks its own structure.
class CostTrace {
 public:
  void add(LayerCost cost) { layers_.push_back(std::move(cost)); }
  const std::vector<LayerCost>& layers() const { return layers_; }

 private:
  std::vector<LayerCost> layers_;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride);

  torch::Tensor forward(const torch::Tensor& x);
  Shape3 cost(CostTrace& trace, const std::string& prefix, Shape3 in) const;

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

/// Output of the residual encoder. `stem` is the conv1 activation at half
/// resolution (pre-maxpool); U-Net decoders consume it as a skip.
struct EncoderOutput {
  std::vector<torch::Tensor> taps;
  torch::Tensor stem;
  torch::Tensor input;
};

class ResNetEncoderImpl : public torch::nn::Module {
 public:
  explicit ResNetEncoderImpl(int variant);

  /// Runs stages 1..upto. Tap i is the post-residual-addition output of the
  /// last block of stage i.
  EncoderOutput forward(const torch::Tensor& x, int upto = kNumStages);

  /// Top-level modules composing stage `one_based`.
  std::vector<std::shared_ptr<torch::nn::Module>> stage_modules(int one_based) const;
  Shape3 cost(CostTrace& trace, Shape3 in) const;

  int variant() const { return variant_; }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  std::array<torch::nn::Sequential, 4> layers;

 private:
  int variant_;
};
TORCH_MODULE(ResNetEncoder);

class UpBlockImpl : public torch::nn::Module {
 public:
  UpBlockImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip);
  Shape3 cost(CostTrace& trace, const std::string& prefix, Shape3 in, Shape3 skip) const;

  torch::nn::ConvTranspose2d up{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(UpBlock);

/// Decoder mirroring the encoder resolutions: 1/32 -> 1/16 -> 1/8 -> 1/4 ->
/// 1/2 -> 1/1, with skips from taps 3, 2, 1, the stem and the input image.
class UNetDecoderImpl : public torch::nn::Module {
 public:
  explicit UNetDecoderImpl(int64_t num_classes);

  torch::Tensor forward(const EncoderOutput& enc);
  Shape3 cost(CostTrace& trace, Shape3 input) const;

  UpBlock up4{nullptr}, up3{nullptr}, up2{nullptr}, up1{nullptr}, up0{nullptr};
  torch::nn::Conv2d classifier{nullptr};
};
TORCH_MODULE(UNetDecoder);

// ---------------------------------------------------------------------------
// StagedNetwork
// ---------------------------------------------------------------------------

struct ForwardOutput {
  std::vector<torch::Tensor> taps;
  torch::Tensor output;  // (M, C) logits or (M, C, H, W) pixel logits
};

/// A residual classifier or residual-encoder U-Net split into kNumStages
/// tappable stages plus a head, with per-group freeze control.
///
/// Frozen groups have requires_grad disabled and are kept in eval mode, so
/// neither their parameters nor their batch-norm statistics change while
/// another group trains.
class StagedNetworkImpl : public torch::nn::Module {
 public:
  StagedNetworkImpl(TaskKind kind, int variant, int64_t num_classes);

  ForwardOutput forward(const torch::Tensor& x);
  EncoderOutput encode(const torch::Tensor& x, int upto = kNumStages);
  torch::Tensor forward_head(const EncoderOutput& enc);

  /// Throws ShapeError if `x` cannot be consumed by this network.
  void check_input(const torch::Tensor& x) const;
  void check_input(Shape3 shape) const;

  void set_trainable(StageId id);
  void set_trainable_all();
  void set_trainable_backbone();
  void freeze_all();
  void set_frozen_mask(const std::vector<bool>& mask);

  /// Stages 1..N then the head; true means frozen.
  const std::vector<bool>& frozen_mask() const { return frozen_; }
  bool is_fully_frozen() const;

  /// Parameters of one group (stage or head), in registration order.
  std::vector<torch::Tensor> group_parameters(StageId id) const;
  /// Parameters and buffers of one group, with names, for digests.
  std::vector<std::pair<std::string, torch::Tensor>> group_state(StageId id) const;
  std::vector<torch::Tensor> trainable_parameters() const;
  std::vector<std::string> group_module_names(StageId id) const;

  void train(bool on = true) override;

  TaskKind kind() const { return kind_; }
  int variant() const { return variant_; }
  int64_t num_classes() const { return num_classes_; }
  /// resnet10, unet_resnet34, ...
  std::string model_name() const;

  Shape3 cost(CostTrace& trace, Shape3 in) const;

  ResNetEncoder encoder{nullptr};
  torch::nn::Linear fc{nullptr};
  UNetDecoder decoder{nullptr};

 private:
  std::vector<std::shared_ptr<torch::nn::Module>> group_modules(StageId id) const;
  void apply_freeze();

  TaskKind kind_;
  int variant_;
  int64_t num_classes_;
  std::vector<bool> frozen_;
};
TORCH_MODULE(StagedNetwork);

/// Every group identifier in mask order (stage 1..N, head).
std::vector<StageId> all_groups();

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Residual classifier from the architecture table. He-normal convolutions,
/// unit/zero batch-norm affine, uniform fan-in linear head; all drawn from a
/// generator seeded with `seed` so identical seeds give identical weights.
StagedNetwork build_resnet(int variant, int64_t num_classes, uint64_t seed = 0);

/// U-Net with a residual encoder of the given variant.
StagedNetwork build_unet(int encoder_variant, int64_t num_classes, uint64_t seed = 0);

StagedNetwork build_network(TaskKind kind, int variant, int64_t num_classes, uint64_t seed = 0);

/// Freezes everything except `id` and returns the same network.
StagedNetwork set_trainable_stage(StagedNetwork net, StageId id);

/// Deep copy (parameters, buffers, mask).
StagedNetwork clone_network(const StagedNetwork& net);

/// Copies parameters and buffers of `src` into `dst` (same architecture).
void copy_weights(const StagedNetwork& src, StagedNetwork& dst);

struct ParamFlopReport {
  int64_t parameter_count = 0;
  int64_t mac_count = 0;
  int64_t flop_count = 0;
  Shape3 input_shape;
  std::string flop_convention;
  std::vector<LayerCost> layers;
};

/// Counts learnable parameters and forward-pass FLOPs for one example of
/// `input_shape`. One multiply-add counts as 2 FLOPs; see flop_convention.
ParamFlopReport count_params_flops(const StagedNetwork& net, Shape3 input_shape);

}  // namespace skd
