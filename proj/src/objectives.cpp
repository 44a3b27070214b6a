#include "skd/objectives.hpp"

#include "skd/errors.hpp"

#include <sstream>

namespace skd {

namespace F = torch::nn::functional;

namespace {

std::string sizes_text(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void check_pair(const torch::Tensor& teacher, const torch::Tensor& student, int stage_index) {
  if (!teacher.defined() || !student.defined()) {
    throw ShapeError("stage " + std::to_string(stage_index) + ": undefined feature tap");
  }
  if (teacher.sizes() != student.sizes()) {
    throw ShapeError("stage " + std::to_string(stage_index) + ": teacher tap " + sizes_text(teacher) +
                     " does not match student tap " + sizes_text(student));
  }
  if (teacher.dim() < 1 || teacher.size(0) < 1) {
    throw ShapeError("stage " + std::to_string(stage_index) + ": empty batch");
  }
}

// Aligns spatial sizes for FSP: equal, or one is the stride-2 image of the
// other (ceil rounding covers odd sizes).
torch::Tensor pool_to(const torch::Tensor& larger, const torch::Tensor& smaller) {
  const auto h = larger.size(2), w = larger.size(3);
  const auto th = smaller.size(2), tw = smaller.size(3);
  const bool halves = (h + 1) / 2 == th && (w + 1) / 2 == tw;
  if (!halves) {
    throw ShapeError("FSP taps " + sizes_text(larger) + " and " + sizes_text(smaller) +
                     " differ by more than one 2x downsampling");
  }
  return F::max_pool2d(larger, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true));
}

}  // namespace

MseNormalization mse_normalization_from_string(const std::string& text) {
  if (text == "batch_only") return MseNormalization::batch_only;
  if (text == "full_mean") return MseNormalization::full_mean;
  throw ConfigError("unknown normalization '" + text + "'; expected batch_only or full_mean");
}

std::string to_string(MseNormalization mode) {
  return mode == MseNormalization::batch_only ? "batch_only" : "full_mean";
}

torch::Tensor stage_mse(const torch::Tensor& teacher, const torch::Tensor& student, MseNormalization normalization,
                        int stage_index) {
  check_pair(teacher, student, stage_index);
  const auto batch = student.size(0);
  auto loss = (student - teacher).pow(2).sum() / static_cast<double>(batch);
  if (normalization == MseNormalization::full_mean) {
    loss = loss / static_cast<double>(student.numel() / batch);
  }
  return loss;
}

torch::Tensor stage_mse(const FeatureTapPair& pair, MseNormalization normalization) {
  return stage_mse(pair.teacher, pair.student, normalization, pair.stage_index);
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || logits.size(1) < 2 || logits.size(0) < 1) {
    throw ShapeError("cross_entropy expects (M, C>=2) logits, got " + sizes_text(logits));
  }
  if (labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    throw ShapeError("cross_entropy labels " + sizes_text(labels) + " do not match logits " + sizes_text(logits));
  }
  const auto classes = logits.size(1);
  if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= classes) {
    throw InvalidLabelError("cross_entropy label outside [0, " + std::to_string(classes) + ")");
  }
  auto log_probs = torch::log_softmax(logits, 1);
  return -log_probs.gather(1, labels.to(torch::kInt64).unsqueeze(1)).mean();
}

torch::Tensor pixel_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels, int64_t ignore_index) {
  if (logits.dim() != 4 || labels.dim() != 3 || logits.size(0) != labels.size(0) ||
      logits.size(2) != labels.size(1) || logits.size(3) != labels.size(2)) {
    throw ShapeError("pixel_cross_entropy: logits " + sizes_text(logits) + " incompatible with labels " +
                     sizes_text(labels));
  }
  const auto classes = logits.size(1);
  auto labels64 = labels.to(torch::kInt64);
  auto valid = labels64 != ignore_index;
  const auto n_valid = valid.sum().item<int64_t>();
  if (n_valid == 0) {
    return (logits * 0.0).sum();
  }
  auto valid_labels = labels64.masked_select(valid);
  if (valid_labels.min().item<int64_t>() < 0 || valid_labels.max().item<int64_t>() >= classes) {
    throw InvalidLabelError("pixel label outside [0, " + std::to_string(classes) + ") and not ignore_index");
  }
  auto safe = torch::where(valid, labels64, torch::zeros_like(labels64));
  auto nll = -torch::log_softmax(logits, 1).gather(1, safe.unsqueeze(1)).squeeze(1);
  return nll.masked_select(valid).sum() / static_cast<double>(n_valid);
}

torch::Tensor task_loss(const torch::Tensor& logits, const torch::Tensor& labels, int64_t ignore_index) {
  return logits.dim() == 4 ? pixel_cross_entropy(logits, labels, ignore_index) : cross_entropy(logits, labels);
}

torch::Tensor simultaneous_loss(const std::vector<FeatureTapPair>& pairs, const torch::Tensor& task_term) {
  if (pairs.empty()) throw ConfigError("simultaneous_loss needs at least one tap pair");
  const auto batch = pairs.front().student.defined() ? pairs.front().student.size(0) : 0;
  torch::Tensor total;
  for (const auto& pair : pairs) {
    auto term = stage_mse(pair, MseNormalization::batch_only);
    if (pair.student.size(0) != batch) {
      throw ShapeError("simultaneous_loss: stage " + std::to_string(pair.stage_index) + " has batch " +
                       std::to_string(pair.student.size(0)) + ", expected " + std::to_string(batch));
    }
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(pairs.size()) + task_term;
}

torch::Tensor simultaneous_loss(const std::vector<FeatureTapPair>& pairs, const torch::Tensor& logits,
                                const torch::Tensor& labels) {
  if (!pairs.empty() && pairs.front().student.defined() && logits.size(0) != pairs.front().student.size(0)) {
    throw ShapeError("simultaneous_loss: logits batch differs from tap batch");
  }
  return simultaneous_loss(pairs, cross_entropy(logits, labels));
}

torch::Tensor fsp_matrix(const torch::Tensor& tap_a, const torch::Tensor& tap_b) {
  if (tap_a.dim() != 4 || tap_b.dim() != 4 || tap_a.size(0) != tap_b.size(0)) {
    throw ShapeError("fsp_matrix expects two (M, C, H, W) taps with equal M, got " + sizes_text(tap_a) + " and " +
                     sizes_text(tap_b));
  }
  auto a = tap_a;
  auto b = tap_b;
  if (a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    if (a.size(2) >= b.size(2) && a.size(3) >= b.size(3)) {
      a = pool_to(a, b);
    } else if (b.size(2) >= a.size(2) && b.size(3) >= a.size(3)) {
      b = pool_to(b, a);
    } else {
      throw ShapeError("fsp_matrix: irreconcilable spatial shapes " + sizes_text(tap_a) + " and " +
                       sizes_text(tap_b));
    }
  }
  const auto batch = a.size(0);
  const auto hw = a.size(2) * a.size(3);
  auto fa = a.reshape({batch, a.size(1), hw});
  auto fb = b.reshape({batch, b.size(1), hw});
  return torch::bmm(fa, fb.transpose(1, 2)) / static_cast<double>(hw);
}

std::vector<std::pair<int, int>> default_fsp_pairs() { return {{0, 1}, {1, 2}, {2, 3}}; }

torch::Tensor fsp_loss(const std::vector<torch::Tensor>& student_taps, const std::vector<torch::Tensor>& teacher_taps,
                       const std::vector<std::pair<int, int>>& pairs) {
  if (student_taps.size() != teacher_taps.size()) {
    throw ShapeError("fsp_loss: " + std::to_string(student_taps.size()) + " student taps vs " +
                     std::to_string(teacher_taps.size()) + " teacher taps");
  }
  if (pairs.empty()) throw ConfigError("fsp_loss needs at least one tap pair");
  torch::Tensor total;
  for (const auto& [a, b] : pairs) {
    const auto n = static_cast<int>(student_taps.size());
    if (a < 0 || b < 0 || a >= n || b >= n) throw ShapeError("fsp_loss: tap pair index out of range");
    auto gs = fsp_matrix(student_taps[a], student_taps[b]);
    auto gt = fsp_matrix(teacher_taps[a], teacher_taps[b]);
    if (gs.sizes() != gt.sizes()) {
      throw ShapeError("fsp_loss: student FSP " + sizes_text(gs) + " vs teacher FSP " + sizes_text(gt));
    }
    auto term = (gs - gt).pow(2).sum() / static_cast<double>(gs.size(0));
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(pairs.size());
}

torch::Tensor attention_map(const torch::Tensor& tap, double p) {
  if (tap.dim() != 4) throw ShapeError("attention_map expects (M, C, H, W), got " + sizes_text(tap));
  auto a = tap.abs().pow(p).sum(1).flatten(1);
  auto norm = a.pow(2).sum(1, /*keepdim=*/true).sqrt();
  // Zero rows divide by 1 and stay zero.
  auto safe = torch::where(norm > 0, norm, torch::ones_like(norm));
  return a / safe;
}

torch::Tensor attention_loss(const std::vector<torch::Tensor>& student_taps,
                             const std::vector<torch::Tensor>& teacher_taps, double beta, double p) {
  if (student_taps.size() != teacher_taps.size() || student_taps.empty()) {
    throw ShapeError("attention_loss: tap lists must be non-empty and equally long");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < student_taps.size(); ++i) {
    check_pair(teacher_taps[i], student_taps[i], static_cast<int>(i + 1));
    auto diff = attention_map(student_taps[i], p) - attention_map(teacher_taps[i], p);
    // linalg norm has a zero subgradient at coincident maps.
    auto term = torch::linalg_vector_norm(diff, 2, c10::IntArrayRef{1}, false, c10::nullopt).mean();
    total = total.defined() ? total + term : term;
  }
  return beta * total;
}

}  // namespace skd
