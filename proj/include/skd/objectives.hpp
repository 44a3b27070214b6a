#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

namespace skd {

/// Reduction applied to the stage feature-map distance.
enum class MseNormalization {
  /// (1/M) sum_j ||y_t(j) - y_s(j)||^2: sum over an example's elements,
  /// mean over the batch.
  batch_only,
  /// batch_only further divided by the number of elements per example.
  full_mean,
};

MseNormalization mse_normalization_from_string(const std::string& text);
std::string to_string(MseNormalization mode);

/// Teacher/student activations for one stage. Both are (M, C, H, W).
struct FeatureTapPair {
  torch::Tensor teacher;
  torch::Tensor student;
  int stage_index = 0;
};

/// Feature-map distance between teacher and student tap of one stage.
/// Throws ShapeError naming the stage and both shapes on mismatch.
torch::Tensor stage_mse(const FeatureTapPair& pair, MseNormalization normalization = MseNormalization::batch_only);
torch::Tensor stage_mse(const torch::Tensor& teacher, const torch::Tensor& student,
                        MseNormalization normalization = MseNormalization::batch_only, int stage_index = 0);

/// Mean over the batch of -log softmax(logits)[label]. logits (M, C) with
/// C >= 2, labels (M) int64 in [0, C). Throws InvalidLabelError otherwise.
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

/// Per-pixel cross entropy for (M, C, H, W) logits and (M, H, W) labels,
/// averaged over pixels whose label is not `ignore_index`.
torch::Tensor pixel_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels, int64_t ignore_index);

/// Dispatches on logits rank: (M, C) -> cross_entropy, (M, C, H, W) ->
/// pixel_cross_entropy.
torch::Tensor task_loss(const torch::Tensor& logits, const torch::Tensor& labels, int64_t ignore_index);

/// Joint objective of simultaneous distillation:
///   (1/(M N)) sum_i sum_j ||y_t(i,j) - y_s(i,j)||^2 + CE.
/// The CE term is supplied by the caller (classification or per-pixel).
torch::Tensor simultaneous_loss(const std::vector<FeatureTapPair>& pairs, const torch::Tensor& task_term);
torch::Tensor simultaneous_loss(const std::vector<FeatureTapPair>& pairs, const torch::Tensor& logits,
                                const torch::Tensor& labels);

/// Flow-of-solution-procedure matrix per batch element:
///   G[p, q] = (1/(H W)) sum_{h,w} a[p,h,w] b[q,h,w]
/// Output (M, C_a, C_b). When one map is the 2x-downsampled size of the
/// other, the larger one is 2x2 max-pooled first (ceil mode). Any other
/// spatial disagreement throws ShapeError.
torch::Tensor fsp_matrix(const torch::Tensor& tap_a, const torch::Tensor& tap_b);

/// Tap index pairs (0-based) used for FSP matching: (0,1), (1,2), (2,3).
std::vector<std::pair<int, int>> default_fsp_pairs();

/// Mean over the pairs of (1/M) sum_j ||G_s(j) - G_t(j)||_F^2.
torch::Tensor fsp_loss(const std::vector<torch::Tensor>& student_taps, const std::vector<torch::Tensor>& teacher_taps,
                       const std::vector<std::pair<int, int>>& pairs = default_fsp_pairs());

/// Spatial attention map: sum over channels of |x|^p, flattened to
/// (M, H*W) and L2-normalised per example. All-zero maps stay all-zero.
torch::Tensor attention_map(const torch::Tensor& tap, double p = 2.0);

/// beta * sum_i mean_j ||A_s(i,j) - A_t(i,j)||_2 over the tapped stages.
torch::Tensor attention_loss(const std::vector<torch::Tensor>& student_taps,
                             const std::vector<torch::Tensor>& teacher_taps, double beta = 1.0, double p = 2.0);

/// Stage used by the single-hint baseline: the middle tap.
inline constexpr int kHintStage = 2;

}  // namespace skd
