#pragma once

// Reference implementations written as plain scalar loops over double
// tensors. They share no code with the library and are deliberately naive.

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

namespace oracle {

inline torch::Tensor rand_double(std::vector<int64_t> shape, torch::Generator& gen, double scale = 1.0) {
  return torch::randn(shape, gen, torch::TensorOptions().dtype(torch::kFloat64)) * scale;
}

inline double stage_mse(const torch::Tensor& t, const torch::Tensor& s, bool full_mean) {
  auto tc = t.contiguous().to(torch::kFloat64);
  auto sc = s.contiguous().to(torch::kFloat64);
  const double* a = tc.data_ptr<double>();
  const double* b = sc.data_ptr<double>();
  double sum = 0.0;
  for (int64_t i = 0; i < tc.numel(); ++i) sum += (b[i] - a[i]) * (b[i] - a[i]);
  const int64_t m = t.size(0);
  double loss = sum / static_cast<double>(m);
  if (full_mean) loss /= static_cast<double>(t.numel() / m);
  return loss;
}

inline double cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  auto l = logits.contiguous().to(torch::kFloat64);
  auto acc = l.accessor<double, 2>();
  auto lab = labels.to(torch::kInt64).contiguous();
  const int64_t m = l.size(0), c = l.size(1);
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double mx = acc[i][0];
    for (int64_t k = 1; k < c; ++k) mx = std::max(mx, acc[i][k]);
    double z = 0.0;
    for (int64_t k = 0; k < c; ++k) z += std::exp(acc[i][k] - mx);
    const int64_t y = lab[i].item<int64_t>();
    total += -(acc[i][y] - mx - std::log(z));
  }
  return total / static_cast<double>(m);
}

inline double pixel_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels, int64_t ignore) {
  auto l = logits.contiguous().to(torch::kFloat64);
  auto acc = l.accessor<double, 4>();
  auto lab = labels.to(torch::kInt64).contiguous();
  auto la = lab.accessor<int64_t, 3>();
  double total = 0.0;
  int64_t n = 0;
  for (int64_t m = 0; m < l.size(0); ++m) {
    for (int64_t h = 0; h < l.size(2); ++h) {
      for (int64_t w = 0; w < l.size(3); ++w) {
        const int64_t y = la[m][h][w];
        if (y == ignore) continue;
        double mx = acc[m][0][h][w];
        for (int64_t k = 1; k < l.size(1); ++k) mx = std::max(mx, acc[m][k][h][w]);
        double z = 0.0;
        for (int64_t k = 0; k < l.size(1); ++k) z += std::exp(acc[m][k][h][w] - mx);
        total += -(acc[m][y][h][w] - mx - std::log(z));
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

inline double simultaneous_loss(const std::vector<torch::Tensor>& teacher, const std::vector<torch::Tensor>& student,
                                const torch::Tensor& logits, const torch::Tensor& labels) {
  double sum = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) sum += stage_mse(teacher[i], student[i], false);
  return sum / static_cast<double>(teacher.size()) + cross_entropy(logits, labels);
}

// 2x2 stride-2 max pooling with ceil rounding.
inline torch::Tensor max_pool_2x2(const torch::Tensor& x) {
  auto xc = x.contiguous().to(torch::kFloat64);
  auto a = xc.accessor<double, 4>();
  const int64_t oh = (x.size(2) + 1) / 2, ow = (x.size(3) + 1) / 2;
  auto out = torch::empty({x.size(0), x.size(1), oh, ow}, torch::kFloat64);
  auto o = out.accessor<double, 4>();
  for (int64_t m = 0; m < x.size(0); ++m)
    for (int64_t c = 0; c < x.size(1); ++c)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double best = -INFINITY;
          for (int64_t di = 0; di < 2; ++di)
            for (int64_t dj = 0; dj < 2; ++dj) {
              const int64_t h = 2 * i + di, w = 2 * j + dj;
              if (h < x.size(2) && w < x.size(3)) best = std::max(best, a[m][c][h][w]);
            }
          o[m][c][i][j] = best;
        }
  return out;
}

// G[m][i][j] = sum_{h,w} A[m,i,h,w] B[m,j,h,w] / (H W), after pooling the
// larger map down to the smaller one.
inline torch::Tensor fsp_matrix(torch::Tensor a, torch::Tensor b) {
  if (a.size(2) > b.size(2)) a = max_pool_2x2(a);
  if (b.size(2) > a.size(2)) b = max_pool_2x2(b);
  auto ac = a.contiguous().to(torch::kFloat64);
  auto bc = b.contiguous().to(torch::kFloat64);
  auto A = ac.accessor<double, 4>();
  auto B = bc.accessor<double, 4>();
  const int64_t m = a.size(0), ci = a.size(1), cj = b.size(1), h = a.size(2), w = a.size(3);
  auto g = torch::zeros({m, ci, cj}, torch::kFloat64);
  auto G = g.accessor<double, 3>();
  for (int64_t n = 0; n < m; ++n)
    for (int64_t i = 0; i < ci; ++i)
      for (int64_t j = 0; j < cj; ++j) {
        double s = 0.0;
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) s += A[n][i][y][x] * B[n][j][y][x];
        G[n][i][j] = s / static_cast<double>(h * w);
      }
  return g;
}

inline double fsp_loss(const std::vector<torch::Tensor>& student, const std::vector<torch::Tensor>& teacher) {
  const std::vector<std::pair<int, int>> pairs = {{0, 1}, {1, 2}, {2, 3}};
  double total = 0.0;
  for (auto [i, j] : pairs) {
    auto gs = fsp_matrix(student[i], student[j]);
    auto gt = fsp_matrix(teacher[i], teacher[j]);
    auto s = gs.accessor<double, 3>();
    auto t = gt.accessor<double, 3>();
    double sum = 0.0;
    for (int64_t n = 0; n < gs.size(0); ++n)
      for (int64_t a = 0; a < gs.size(1); ++a)
        for (int64_t b = 0; b < gs.size(2); ++b) sum += (s[n][a][b] - t[n][a][b]) * (s[n][a][b] - t[n][a][b]);
    total += sum / static_cast<double>(gs.size(0));
  }
  return total / static_cast<double>(pairs.size());
}

// Per-example spatial map sum_c |x|^p, L2-normalised.
inline std::vector<std::vector<double>> attention_map(const torch::Tensor& tap, double p) {
  auto xc = tap.contiguous().to(torch::kFloat64);
  auto X = xc.accessor<double, 4>();
  std::vector<std::vector<double>> maps;
  for (int64_t n = 0; n < tap.size(0); ++n) {
    std::vector<double> q;
    for (int64_t h = 0; h < tap.size(2); ++h)
      for (int64_t w = 0; w < tap.size(3); ++w) {
        double s = 0.0;
        for (int64_t c = 0; c < tap.size(1); ++c) s += std::pow(std::abs(X[n][c][h][w]), p);
        q.push_back(s);
      }
    double norm = 0.0;
    for (double v : q) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (double& v : q) v /= norm;
    }
    maps.push_back(std::move(q));
  }
  return maps;
}

inline double attention_loss(const std::vector<torch::Tensor>& student, const std::vector<torch::Tensor>& teacher,
                             double beta, double p = 2.0) {
  double total = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    auto qs = attention_map(student[i], p);
    auto qt = attention_map(teacher[i], p);
    double per_stage = 0.0;
    for (std::size_t n = 0; n < qs.size(); ++n) {
      double d = 0.0;
      for (std::size_t k = 0; k < qs[n].size(); ++k) d += (qs[n][k] - qt[n][k]) * (qs[n][k] - qt[n][k]);
      per_stage += std::sqrt(d);
    }
    total += per_stage / static_cast<double>(qs.size());
  }
  return beta * total;
}

// Mean IoU over classes that occur in the labels or the predictions,
// ignoring pixels whose label equals `ignore`.
inline double mean_iou(const std::vector<int64_t>& labels, const std::vector<int64_t>& preds, int64_t classes,
                       int64_t ignore) {
  std::vector<std::vector<int64_t>> cm(classes, std::vector<int64_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore) continue;
    cm[labels[i]][preds[i]] += 1;
  }
  double sum = 0.0;
  int present = 0;
  for (int64_t c = 0; c < classes; ++c) {
    int64_t tp = cm[c][c], row = 0, col = 0;
    for (int64_t k = 0; k < classes; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    const int64_t uni = row + col - tp;
    if (uni == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++present;
  }
  return sum / present;
}

// Closed-form parameter and multiply-accumulate counts of the basic-block
// ResNet family with the conventions used by the library: convolutions
// without bias, two affine parameters per batch-norm channel, a biased fully
// connected head, one MAC per batch-norm output element.
struct ResNetCounts {
  int64_t params = 0;
  int64_t macs = 0;
};

inline ResNetCounts resnet_counts(const std::vector<int>& blocks, int64_t classes, int64_t resolution) {
  ResNetCounts r;
  auto conv = [&r](int64_t cin, int64_t cout, int64_t k, int64_t out_hw) {
    r.params += cin * cout * k * k;
    r.macs += cin * cout * k * k * out_hw * out_hw;
  };
  auto bn = [&r](int64_t c, int64_t hw) {
    r.params += 2 * c;
    r.macs += c * hw * hw;
  };
  int64_t hw = (resolution + 2 * 3 - 7) / 2 + 1;
  conv(3, 64, 7, hw);
  bn(64, hw);
  hw = (hw + 2 * 1 - 3) / 2 + 1;
  const int64_t widths[4] = {64, 128, 256, 512};
  int64_t cin = 64;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < blocks[s]; ++b) {
      const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      const int64_t out_hw = (hw + 2 - 3) / stride + 1;
      conv(cin, widths[s], 3, out_hw);
      bn(widths[s], out_hw);
      conv(widths[s], widths[s], 3, out_hw);
      bn(widths[s], out_hw);
      if (stride != 1 || cin != widths[s]) {
        conv(cin, widths[s], 1, out_hw);
        bn(widths[s], out_hw);
      }
      cin = widths[s];
      hw = out_hw;
    }
  }
  r.params += 512 * classes + classes;
  r.macs += 512 * classes;
  return r;
}

// Central finite differences of a scalar function of several double
// tensors, compared with autograd. Returns the worst relative error
// ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, floor) across inputs.
inline double gradient_check(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
                             std::vector<torch::Tensor> inputs, double eps = 1e-6, double floor = 1e-10) {
  for (auto& x : inputs) x = x.detach().clone().set_requires_grad(true);
  auto y = f(inputs);
  auto grads = torch::autograd::grad({y}, inputs, {}, false, false, true);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto base = inputs[k].detach().clone();
    auto fd = torch::zeros_like(base);
    auto flat = base.view(-1);
    auto fd_flat = fd.view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      std::vector<torch::Tensor> probe;
      for (auto& x : inputs) probe.push_back(x.detach());
      flat[i] = orig + eps;
      probe[k] = base.clone();
      const double up = f(probe).item<double>();
      flat[i] = orig - eps;
      probe[k] = base.clone();
      const double down = f(probe).item<double>();
      flat[i] = orig;
      fd_flat[i] = (up - down) / (2 * eps);
    }
    auto g = grads[k].defined() ? grads[k] : torch::zeros_like(fd);
    const double num = (g - fd).norm().item<double>();
    const double den = std::max({g.norm().item<double>(), fd.norm().item<double>(), floor});
    worst = std::max(worst, num / den);
  }
  return worst;
}

}  // namespace oracle
