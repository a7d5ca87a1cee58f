#include <array>
#include <algorithm>
#include <cmath>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace {

using detail::Node;

void require_4d(const Tensor& x, const char* op) {
  if (x.dim() != 4) {
    throw ShapeError(std::string(op) + " expects a 4-D [N,C,H,W] tensor, got " + shape_str(x.shape()));
  }
}

// Mean and population variance of a strided block, accumulated in double.
struct BlockStats {
  double mean;
  double var;
};

BlockStats block_stats(const float* plane, int64_t row_stride, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  double acc = 0.0;
  for (int64_t i = r0; i < r1; ++i) {
    for (int64_t j = c0; j < c1; ++j) acc += plane[i * row_stride + j];
  }
  const double n = static_cast<double>((r1 - r0) * (c1 - c0));
  const double m = acc / n;
  double sq = 0.0;
  for (int64_t i = r0; i < r1; ++i) {
    for (int64_t j = c0; j < c1; ++j) {
      const double d = plane[i * row_stride + j] - m;
      sq += d * d;
    }
  }
  return {m, sq / n};
}

}  // namespace

Moments instance_stats(const Tensor& x) {
  require_4d(x, "instance_stats");
  const auto& s = x.shape();
  const int64_t nc = s[0] * s[1];
  const int64_t hw = s[2] * s[3];
  std::vector<float> mu(static_cast<size_t>(nc));
  std::vector<float> sd(static_cast<size_t>(nc));
  for (int64_t i = 0; i < nc; ++i) {
    const BlockStats st = block_stats(x.data().data() + i * hw, s[3], 0, s[2], 0, s[3]);
    mu[i] = static_cast<float>(st.mean);
    sd[i] = static_cast<float>(std::sqrt(st.var));
  }
  const Shape out_shape{s[0], s[1], 1, 1};

  // d std / d mean vanishes (deviations sum to zero), so the two nodes are independent.
  Tensor mean_t = make_result(out_shape, mu, {x}, [x, hw](Node& self) {
    auto& g = x.node()->grad_buffer();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float gm = self.grad[i] / static_cast<float>(hw);
      for (int64_t j = 0; j < hw; ++j) g[i * hw + j] += gm;
    }
  });
  Tensor std_t = make_result(out_shape, sd, {x}, [x, hw, mu](Node& self) {
    auto& g = x.node()->grad_buffer();
    const auto& xv = x.node()->value;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float sdv = self.value[i];
      if (sdv <= 0.0f) continue;  // constant channel: zero subgradient
      const float k = self.grad[i] / (static_cast<float>(hw) * sdv);
      for (int64_t j = 0; j < hw; ++j) g[i * hw + j] += k * (xv[i * hw + j] - mu[i]);
    }
  });
  return {mean_t, std_t};
}

Tensor instance_norm(const Tensor& x, float eps) {
  require_4d(x, "instance_norm");
  const auto& s = x.shape();
  const int64_t nc = s[0] * s[1];
  const int64_t hw = s[2] * s[3];
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  std::vector<float> inv_std(static_cast<size_t>(nc));
  for (int64_t i = 0; i < nc; ++i) {
    const BlockStats st = block_stats(xv.data() + i * hw, s[3], 0, s[2], 0, s[3]);
    const float is = static_cast<float>(1.0 / std::sqrt(st.var + eps));
    inv_std[i] = is;
    const float m = static_cast<float>(st.mean);
    for (int64_t j = 0; j < hw; ++j) out[i * hw + j] = (xv[i * hw + j] - m) * is;
  }
  return make_result(s, std::move(out), {x}, [x, nc, hw, inv_std](Node& self) {
    auto& g = x.node()->grad_buffer();
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (int64_t i = 0; i < nc; ++i) {
      double mg = 0.0;
      double mgy = 0.0;
      for (int64_t j = 0; j < hw; ++j) {
        mg += gy[i * hw + j];
        mgy += static_cast<double>(gy[i * hw + j]) * y[i * hw + j];
      }
      mg /= static_cast<double>(hw);
      mgy /= static_cast<double>(hw);
      for (int64_t j = 0; j < hw; ++j) {
        const int64_t k = i * hw + j;
        g[k] += static_cast<float>(inv_std[i] * (gy[k] - mg - y[k] * mgy));
      }
    }
  });
}

Moments patch_stats(const Tensor& x, int grid_h, int grid_w, int patch_h, int patch_w, float eps) {
  require_4d(x, "patch_stats");
  const auto& s = x.shape();
  const int64_t h = s[2];
  const int64_t w = s[3];
  if (grid_h <= 0 || grid_w <= 0 || patch_h <= 0 || patch_w <= 0 ||
      static_cast<int64_t>(grid_h - 1) * patch_h >= h || static_cast<int64_t>(grid_w - 1) * patch_w >= w) {
    throw ShapeError("patch_stats: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " of " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                     " patches leaves an empty patch in " + shape_str(s));
  }
  const int64_t nc = s[0] * s[1];
  const int64_t cells = static_cast<int64_t>(grid_h) * grid_w;
  std::vector<float> mu(static_cast<size_t>(nc * cells));
  std::vector<float> sd(mu.size());
  auto bounds = [=](int64_t cell) {
    const int64_t gi = cell / grid_w;
    const int64_t gj = cell % grid_w;
    return std::array<int64_t, 4>{gi * patch_h, std::min<int64_t>((gi + 1) * patch_h, h), gj * patch_w,
                                  std::min<int64_t>((gj + 1) * patch_w, w)};
  };
  const auto& xv = x.data();
  for (int64_t i = 0; i < nc; ++i) {
    for (int64_t cell = 0; cell < cells; ++cell) {
      const auto b = bounds(cell);
      const BlockStats st = block_stats(xv.data() + i * h * w, w, b[0], b[1], b[2], b[3]);
      mu[i * cells + cell] = static_cast<float>(st.mean);
      sd[i * cells + cell] = static_cast<float>(std::sqrt(st.var + eps));
    }
  }
  const Shape out_shape{s[0], s[1], grid_h, grid_w};
  Tensor mean_t = make_result(out_shape, mu, {x}, [x, nc, cells, h, w, bounds](Node& self) {
    auto& g = x.node()->grad_buffer();
    for (int64_t i = 0; i < nc; ++i) {
      for (int64_t cell = 0; cell < cells; ++cell) {
        const auto b = bounds(cell);
        const float k = self.grad[i * cells + cell] / static_cast<float>((b[1] - b[0]) * (b[3] - b[2]));
        for (int64_t r = b[0]; r < b[1]; ++r) {
          for (int64_t c = b[2]; c < b[3]; ++c) g[i * h * w + r * w + c] += k;
        }
      }
    }
  });
  Tensor std_t = make_result(out_shape, sd, {x}, [x, nc, cells, h, w, bounds, mu](Node& self) {
    auto& g = x.node()->grad_buffer();
    const auto& xv = x.node()->value;
    for (int64_t i = 0; i < nc; ++i) {
      for (int64_t cell = 0; cell < cells; ++cell) {
        const auto b = bounds(cell);
        const int64_t idx = i * cells + cell;
        const float n = static_cast<float>((b[1] - b[0]) * (b[3] - b[2]));
        const float k = self.grad[idx] / (n * self.value[idx]);
        for (int64_t r = b[0]; r < b[1]; ++r) {
          for (int64_t c = b[2]; c < b[3]; ++c) {
            const int64_t p = i * h * w + r * w + c;
            g[p] += k * (xv[p] - mu[idx]);
          }
        }
      }
    }
  });
  return {mean_t, std_t};
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shape " + shape_str(a.shape()) + " != " + shape_str(b.shape()));
  }
  const auto& av = a.data();
  const auto& bv = b.data();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const double n = static_cast<double>(av.size());
  return make_result({1}, {static_cast<float>(acc / n)}, {a, b}, [a, b, n](Node& self) {
    const float k = static_cast<float>(2.0 * self.grad[0] / n);
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    if (a.requires_grad()) {
      auto& g = a.node()->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += k * (av[i] - bv[i]);
    }
    if (b.requires_grad()) {
      auto& g = b.node()->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= k * (av[i] - bv[i]);
    }
  });
}

Tensor bce_with_logits(const Tensor& logit, const Tensor& target) {
  if (logit.shape() != target.shape()) {
    throw ShapeError("bce_with_logits: shape " + shape_str(logit.shape()) + " != " + shape_str(target.shape()));
  }
  const auto& z = logit.data();
  const auto& t = target.data();
  double acc = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    acc += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  const double n = static_cast<double>(z.size());
  return make_result({1}, {static_cast<float>(acc / n)}, {logit, target}, [logit, target, n](Node& self) {
    const auto& z = logit.node()->value;
    const auto& t = target.node()->value;
    const double k = self.grad[0] / n;
    if (logit.requires_grad()) {
      auto& g = logit.node()->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) {
        const double sig = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
        g[i] += static_cast<float>(k * (sig - t[i]));
      }
    }
    if (target.requires_grad()) {
      auto& g = target.node()->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(-k * z[i]);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.dim() != 2 || logits.size(0) != static_cast<int64_t>(labels.size())) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const int64_t n = logits.size(0);
  const int64_t k = logits.size(1);
  const auto& z = logits.data();
  std::vector<float> prob(z.size());
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ContractError("cross_entropy: label out of range");
    const float* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (int64_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    for (int64_t j = 0; j < k; ++j) prob[i * k + j] = static_cast<float>(std::exp(row[j] - mx) / se);
    acc += -(row[labels[i]] - mx - std::log(se));
  }
  return make_result({1}, {static_cast<float>(acc / n)}, {logits}, [logits, labels, prob, n, k](Node& self) {
    auto& g = logits.node()->grad_buffer();
    const float s = self.grad[0] / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < k; ++j) {
        g[i * k + j] += s * (prob[i * k + j] - (j == labels[i] ? 1.0f : 0.0f));
      }
    }
  });
}

}  // namespace stylesketch
