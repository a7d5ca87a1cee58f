#include <cblas.h>

#include <algorithm>
#include <limits>
#include <memory>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace {

using detail::Node;

struct Dims4 {
  int64_t n, c, h, w;
};

Dims4 dims4(const Tensor& x, const char* op) {
  if (x.dim() != 4) {
    throw ShapeError(std::string(op) + " expects a 4-D [N,C,H,W] tensor, got " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  return {s[0], s[1], s[2], s[3]};
}

struct ConvGeom {
  int64_t n, c, h, w, k, stride, pad, ho, wo;
  int64_t patch() const { return ho * wo; }
  int64_t rows() const { return c * k * k; }
  int64_t cols() const { return n * ho * wo; }
};

// Output columns [lo, hi) whose input column ow*s - p + kj lies inside the image.
std::pair<int64_t, int64_t> valid_cols(const ConvGeom& g, int64_t kj) {
  const int64_t off = g.pad - kj;
  int64_t lo = off > 0 ? (off + g.stride - 1) / g.stride : 0;
  int64_t hi = (g.w - 1 + off) >= 0 ? (g.w - 1 + off) / g.stride + 1 : 0;
  lo = std::min(lo, g.wo);
  hi = std::clamp(hi, lo, g.wo);
  return {lo, hi};
}

// Uninitialised scratch; every element is written before it is read.
struct Scratch {
  explicit Scratch(int64_t n) : data(new float[static_cast<size_t>(n)]) {}
  float* get() { return data.get(); }
  std::unique_ptr<float[]> data;
};

// cols[(c*k + ki)*k + kj][b*P + oh*Wo + ow] = x[b, c, oh*s - p + ki, ow*s - p + kj] (0 outside)
void im2col(const float* x, const ConvGeom& g, float* cols) {
  const int64_t ld = g.cols();
  const int64_t p = g.patch();
  for (int64_t c = 0; c < g.c; ++c) {
    for (int64_t ki = 0; ki < g.k; ++ki) {
      for (int64_t kj = 0; kj < g.k; ++kj) {
        float* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
        const auto [lo, hi] = valid_cols(g, kj);
        const int64_t shift = kj - g.pad;
        for (int64_t b = 0; b < g.n; ++b) {
          const float* xc = x + (b * g.c + c) * g.h * g.w;
          float* dst = row + b * p;
          for (int64_t oh = 0; oh < g.ho; ++oh) {
            const int64_t ih = oh * g.stride - g.pad + ki;
            float* d = dst + oh * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill_n(d, g.wo, 0.0f);
              continue;
            }
            const float* xr = xc + ih * g.w + shift;
            std::fill_n(d, lo, 0.0f);
            if (g.stride == 1) {
              std::copy(xr + lo, xr + hi, d + lo);
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) d[ow] = xr[ow * g.stride];
            }
            std::fill(d + hi, d + g.wo, 0.0f);
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const ConvGeom& g, float* dx) {
  const int64_t ld = g.cols();
  const int64_t p = g.patch();
  for (int64_t c = 0; c < g.c; ++c) {
    for (int64_t ki = 0; ki < g.k; ++ki) {
      for (int64_t kj = 0; kj < g.k; ++kj) {
        const float* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
        const auto [lo, hi] = valid_cols(g, kj);
        const int64_t shift = kj - g.pad;
        for (int64_t b = 0; b < g.n; ++b) {
          float* xc = dx + (b * g.c + c) * g.h * g.w;
          const float* src = row + b * p;
          for (int64_t oh = 0; oh < g.ho; ++oh) {
            const int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            float* xr = xc + ih * g.w + shift;
            const float* s = src + oh * g.wo;
            for (int64_t ow = lo; ow < hi; ++ow) xr[ow * g.stride] += s[ow];
          }
        }
      }
    }
  }
}

void check_kernel(const Dims4& d, int kernel, int stride, const char* op) {
  if (kernel <= 0 || stride <= 0) throw ShapeError(std::string(op) + ": kernel and stride must be positive");
  if (kernel > d.h || kernel > d.w) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) + " larger than input " +
                     std::to_string(d.h) + "x" + std::to_string(d.w));
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const Dims4 d = dims4(x, "conv2d");
  if (weight.dim() != 4) throw ShapeError("conv2d weight must be [C_out,C_in,k,k], got " + shape_str(weight.shape()));
  const int64_t c_out = weight.size(0);
  const int64_t k = weight.size(2);
  if (weight.size(1) != d.c) {
    throw ShapeError("conv2d: input channels (dimension 1) " + std::to_string(d.c) +
                     " != weight dimension 1 (" + std::to_string(weight.size(1)) + ")");
  }
  if (weight.size(3) != k) throw ShapeError("conv2d: non-square kernel " + shape_str(weight.shape()));
  if (stride <= 0 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (d.h + 2 * padding < k || d.w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input height/width " +
                     std::to_string(d.h + 2 * padding) + "x" + std::to_string(d.w + 2 * padding));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != c_out)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(c_out) + "]");
  }
  ConvGeom g{d.n, d.c, d.h, d.w, k, stride, padding, (d.h + 2 * padding - k) / stride + 1,
             (d.w + 2 * padding - k) / stride + 1};

  Scratch y(c_out * g.cols());
  {
    Scratch cols(g.rows() * g.cols());
    im2col(x.data().data(), g, cols.get());
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(c_out),
                static_cast<int>(g.cols()), static_cast<int>(g.rows()), 1.0f, weight.data().data(),
                static_cast<int>(g.rows()), cols.get(), static_cast<int>(g.cols()), 0.0f, y.get(),
                static_cast<int>(g.cols()));
  }

  const int64_t p = g.patch();
  std::vector<float> out(static_cast<size_t>(g.n * c_out * p));
  for (int64_t b = 0; b < g.n; ++b) {
    for (int64_t co = 0; co < c_out; ++co) {
      const float bv = bias.defined() ? bias.data()[co] : 0.0f;
      const float* src = y.get() + co * g.cols() + b * p;
      float* dst = out.data() + (b * c_out + co) * p;
      for (int64_t i = 0; i < p; ++i) dst[i] = src[i] + bv;
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({g.n, c_out, g.ho, g.wo}, std::move(out), inputs, [x, weight, bias, g, c_out](Node& self) {
    const int64_t p = g.patch();
    // Gather dY into [C_out, N*P].
    Scratch dy_buf(c_out * g.cols());
    float* dy = dy_buf.get();
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t co = 0; co < c_out; ++co) {
        std::copy_n(self.grad.data() + (b * c_out + co) * p, p, dy + co * g.cols() + b * p);
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto& gb = bias.node()->grad_buffer();
      for (int64_t co = 0; co < c_out; ++co) {
        double acc = 0.0;
        const float* r = dy + co * g.cols();
        for (int64_t i = 0; i < g.cols(); ++i) acc += r[i];
        gb[co] += static_cast<float>(acc);
      }
    }
    const int m = static_cast<int>(c_out);
    const int kk = static_cast<int>(g.rows());
    const int nn = static_cast<int>(g.cols());
    if (weight.requires_grad()) {
      Scratch cols(g.rows() * g.cols());
      im2col(x.data().data(), g, cols.get());
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, kk, nn, 1.0f, dy, nn, cols.get(), nn, 1.0f,
                  weight.node()->grad_buffer().data(), kk);
    }
    if (x.requires_grad()) {
      Scratch dcols(g.rows() * g.cols());
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kk, nn, m, 1.0f, weight.data().data(), kk, dy, nn,
                  0.0f, dcols.get(), nn);
      col2im(dcols.get(), g, x.node()->grad_buffer().data());
    }
  });
}

namespace {

// Batch index into a [N,1,H,W] or [1,1,H,W] membership mask.
const float* mask_plane(const Tensor* mask, const Dims4& d, int64_t nc) {
  if (!mask) return nullptr;
  const int64_t n = mask->size(0) == 1 ? 0 : nc / d.c;
  return mask->data().data() + n * d.h * d.w;
}

void check_mask(const Tensor& mask, const Dims4& d, const char* op) {
  if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(2) != d.h || mask.size(3) != d.w ||
      (mask.size(0) != 1 && mask.size(0) != d.n)) {
    throw ShapeError(std::string(op) + ": membership mask " + shape_str(mask.shape()) +
                     " does not cover the input spatially");
  }
}

// Max over the members of each window (all positions when mask is null).
// Windows without members yield 0 and pass no gradient.
Tensor max_pool_impl(const Tensor& x, const Tensor* mask, int kernel, int stride, const char* op) {
  const Dims4 d = dims4(x, op);
  check_kernel(d, kernel, stride, op);
  if (mask) check_mask(*mask, d, op);
  const int64_t ho = (d.h - kernel) / stride + 1;
  const int64_t wo = (d.w - kernel) / stride + 1;
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(d.n * d.c * ho * wo));
  std::vector<int64_t> argmax(out.size());
  for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
    const float* plane = xv.data() + nc * d.h * d.w;
    const float* member = mask_plane(mask, d, nc);
    for (int64_t oh = 0; oh < ho; ++oh) {
      for (int64_t ow = 0; ow < wo; ++ow) {
        float best = 0.0f;
        int64_t best_i = -1;
        for (int64_t i = 0; i < kernel; ++i) {
          for (int64_t j = 0; j < kernel; ++j) {
            const int64_t idx = (oh * stride + i) * d.w + ow * stride + j;
            if (member && member[idx] == 0.0f) continue;
            if (best_i < 0 || plane[idx] > best) {
              best = plane[idx];
              best_i = idx;
            }
          }
        }
        const int64_t o = (nc * ho + oh) * wo + ow;
        out[o] = best;
        argmax[o] = best_i < 0 ? -1 : nc * d.h * d.w + best_i;
      }
    }
  }
  return make_result({d.n, d.c, ho, wo}, std::move(out), {x}, [x, argmax = std::move(argmax)](Node& self) {
    auto& g = x.node()->grad_buffer();
    for (size_t o = 0; o < argmax.size(); ++o) {
      if (argmax[o] >= 0) g[argmax[o]] += self.grad[o];
    }
  });
}

}  // namespace

Tensor max_pool2d(const Tensor& x, int kernel, int stride) { return max_pool_impl(x, nullptr, kernel, stride, "max_pool2d"); }

Tensor masked_max_pool2d(const Tensor& x, const Tensor& mask, int kernel, int stride) {
  return max_pool_impl(x, &mask, kernel, stride, "masked_max_pool2d");
}

namespace {

// Shared by avg_pool2d and adaptive_avg_pool2d: window bounds per output row/col.
struct Windows {
  std::vector<int64_t> h0, h1, w0, w1;
};

// Mean over the members of each window (all positions when mask is null);
// windows without members yield 0.
Tensor window_average(const Tensor& x, const Dims4& d, Windows win, const Tensor* mask) {
  const int64_t ho = static_cast<int64_t>(win.h0.size());
  const int64_t wo = static_cast<int64_t>(win.w0.size());
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(d.n * d.c * ho * wo));
  // Per-output reciprocal member count (0 for empty windows), shared by backward.
  std::vector<float> inv_count(out.size());
  for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
    const float* plane = xv.data() + nc * d.h * d.w;
    const float* member = mask_plane(mask, d, nc);
    for (int64_t oh = 0; oh < ho; ++oh) {
      for (int64_t ow = 0; ow < wo; ++ow) {
        double acc = 0.0;
        int64_t cnt = 0;
        for (int64_t i = win.h0[oh]; i < win.h1[oh]; ++i) {
          for (int64_t j = win.w0[ow]; j < win.w1[ow]; ++j) {
            if (member && member[i * d.w + j] == 0.0f) continue;
            acc += plane[i * d.w + j];
            ++cnt;
          }
        }
        const int64_t o = (nc * ho + oh) * wo + ow;
        out[o] = cnt ? static_cast<float>(acc / static_cast<double>(cnt)) : 0.0f;
        inv_count[o] = cnt ? 1.0f / static_cast<float>(cnt) : 0.0f;
      }
    }
  }
  Tensor mask_copy = mask ? *mask : Tensor();
  return make_result({d.n, d.c, ho, wo}, std::move(out), {x},
                     [x, d, win = std::move(win), ho, wo, inv_count = std::move(inv_count), mask_copy](Node& self) {
    auto& g = x.node()->grad_buffer();
    const Tensor* m = mask_copy.defined() ? &mask_copy : nullptr;
    for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
      float* plane = g.data() + nc * d.h * d.w;
      const float* member = mask_plane(m, d, nc);
      for (int64_t oh = 0; oh < ho; ++oh) {
        for (int64_t ow = 0; ow < wo; ++ow) {
          const int64_t o = (nc * ho + oh) * wo + ow;
          const float go = self.grad[o] * inv_count[o];
          for (int64_t i = win.h0[oh]; i < win.h1[oh]; ++i) {
            for (int64_t j = win.w0[ow]; j < win.w1[ow]; ++j) {
              if (member && member[i * d.w + j] == 0.0f) continue;
              plane[i * d.w + j] += go;
            }
          }
        }
      }
    }
  });
}

Windows adaptive_windows(const Dims4& d, int out_h, int out_w, const char* op) {
  if (out_h <= 0 || out_w <= 0 || out_h > d.h || out_w > d.w) {
    throw ShapeError(std::string(op) + ": output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " incompatible with input " + std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  Windows win;
  for (int64_t o = 0; o < out_h; ++o) {
    win.h0.push_back(o * d.h / out_h);
    win.h1.push_back((o + 1) * d.h / out_h);
  }
  for (int64_t o = 0; o < out_w; ++o) {
    win.w0.push_back(o * d.w / out_w);
    win.w1.push_back((o + 1) * d.w / out_w);
  }
  return win;
}

}  // namespace

Tensor avg_pool2d(const Tensor& x, int kernel, int stride) {
  const Dims4 d = dims4(x, "avg_pool2d");
  check_kernel(d, kernel, stride, "avg_pool2d");
  Windows win;
  for (int64_t o = 0; o < (d.h - kernel) / stride + 1; ++o) {
    win.h0.push_back(o * stride);
    win.h1.push_back(o * stride + kernel);
  }
  for (int64_t o = 0; o < (d.w - kernel) / stride + 1; ++o) {
    win.w0.push_back(o * stride);
    win.w1.push_back(o * stride + kernel);
  }
  return window_average(x, d, std::move(win), nullptr);
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  const Dims4 d = dims4(x, "adaptive_avg_pool2d");
  return window_average(x, d, adaptive_windows(d, out_h, out_w, "adaptive_avg_pool2d"), nullptr);
}

Tensor masked_adaptive_avg_pool2d(const Tensor& x, const Tensor& mask, int out_h, int out_w) {
  const Dims4 d = dims4(x, "masked_adaptive_avg_pool2d");
  check_mask(mask, d, "masked_adaptive_avg_pool2d");
  return window_average(x, d, adaptive_windows(d, out_h, out_w, "masked_adaptive_avg_pool2d"), &mask);
}

Tensor global_avg_pool(const Tensor& x) {
  dims4(x, "global_avg_pool");
  return adaptive_avg_pool2d(x, 1, 1);
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  const Dims4 d = dims4(x, "upsample_nearest");
  if (factor <= 0) throw ShapeError("upsample_nearest: factor must be positive");
  const int64_t ho = d.h * factor;
  const int64_t wo = d.w * factor;
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(d.n * d.c * ho * wo));
  for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
    for (int64_t i = 0; i < ho; ++i) {
      const float* src = xv.data() + (nc * d.h + i / factor) * d.w;
      float* dst = out.data() + (nc * ho + i) * wo;
      for (int64_t j = 0; j < wo; ++j) dst[j] = src[j / factor];
    }
  }
  return make_result({d.n, d.c, ho, wo}, std::move(out), {x}, [x, d, factor, ho, wo](Node& self) {
    auto& g = x.node()->grad_buffer();
    for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
      for (int64_t i = 0; i < ho; ++i) {
        float* dst = g.data() + (nc * d.h + i / factor) * d.w;
        const float* src = self.grad.data() + (nc * ho + i) * wo;
        for (int64_t j = 0; j < wo; ++j) dst[j / factor] += src[j];
      }
    }
  });
}

Tensor downsample_avg(const Tensor& x, int factor) {
  const Dims4 d = dims4(x, "downsample_avg");
  if (factor <= 0 || d.h % factor != 0 || d.w % factor != 0) {
    throw ShapeError("downsample_avg: factor " + std::to_string(factor) + " does not divide " +
                     std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  return avg_pool2d(x, factor, factor);
}

Tensor forward_diff(const Tensor& x, int axis) {
  const Dims4 d = dims4(x, "forward_diff");
  if (axis != 2 && axis != 3) throw ContractError("forward_diff axis must be 2 or 3");
  const int64_t dh = axis == 2 ? 1 : 0;
  const int64_t dw = axis == 3 ? 1 : 0;
  if (d.h - dh < 1 || d.w - dw < 1) throw ShapeError("forward_diff: axis too short");
  const int64_t ho = d.h - dh;
  const int64_t wo = d.w - dw;
  const auto& xv = x.data();
  std::vector<float> out(static_cast<size_t>(d.n * d.c * ho * wo));
  for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
    const float* plane = xv.data() + nc * d.h * d.w;
    for (int64_t i = 0; i < ho; ++i) {
      for (int64_t j = 0; j < wo; ++j) {
        out[(nc * ho + i) * wo + j] = plane[(i + dh) * d.w + j + dw] - plane[i * d.w + j];
      }
    }
  }
  return make_result({d.n, d.c, ho, wo}, std::move(out), {x}, [x, d, dh, dw, ho, wo](Node& self) {
    auto& g = x.node()->grad_buffer();
    for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
      float* plane = g.data() + nc * d.h * d.w;
      for (int64_t i = 0; i < ho; ++i) {
        for (int64_t j = 0; j < wo; ++j) {
          const float go = self.grad[(nc * ho + i) * wo + j];
          plane[(i + dh) * d.w + j + dw] += go;
          plane[i * d.w + j] -= go;
        }
      }
    }
  });
}

}  // namespace stylesketch
