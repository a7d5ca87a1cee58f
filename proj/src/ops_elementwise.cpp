#include <cblas.h>

#include <algorithm>
#include <cmath>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace {

using detail::Node;

struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> stride_a;
  std::vector<int64_t> stride_b;
};

std::vector<int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const size_t nd = out.size();
  const size_t lead = nd - in.size();
  std::vector<int64_t> strides(nd, 0);
  int64_t s = 1;
  for (size_t i = in.size(); i-- > 0;) {
    strides[lead + i] = (in[i] == 1 && out[lead + i] != 1) ? 0 : s;
    s *= in[i];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const size_t nd = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.resize(nd);
  for (size_t i = 0; i < nd; ++i) {
    const int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b) + " at dimension " + std::to_string(i));
    }
    p.out[i] = std::max(da, db);
  }
  p.stride_a = aligned_strides(a, p.out);
  p.stride_b = aligned_strides(b, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const size_t nd = p.out.size();
  if (nd == 0) {
    f(0, 0, 0);
    return;
  }
  const int64_t inner = p.out[nd - 1];
  const int64_t sa = p.stride_a[nd - 1];
  const int64_t sb = p.stride_b[nd - 1];
  const int64_t total = numel_of(p.out);
  std::vector<int64_t> idx(nd, 0);
  int64_t ia = 0;
  int64_t ib = 0;
  for (int64_t o = 0; o < total; o += inner) {
    for (int64_t j = 0; j < inner; ++j) f(o + j, ia + j * sa, ib + j * sb);
    for (size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<float> out;
  BroadcastPlan plan;
  const bool same = a.shape() == b.shape();
  if (same) {
    plan.out = a.shape();
  } else {
    plan = plan_broadcast(a.shape(), b.shape(), name);
  }
  out.resize(static_cast<size_t>(numel_of(plan.out)));
  auto apply = [&](int64_t o, int64_t i, int64_t j) {
    switch (op) {
      case BinOp::kAdd: out[o] = av[i] + bv[j]; break;
      case BinOp::kSub: out[o] = av[i] - bv[j]; break;
      case BinOp::kMul: out[o] = av[i] * bv[j]; break;
      case BinOp::kDiv: out[o] = av[i] / bv[j]; break;
    }
  };
  if (same) {
    for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i) apply(i, i, i);
  } else {
    for_each_broadcast(plan, apply);
  }

  return make_result(plan.out, std::move(out), {a, b}, [a, b, op, same, plan](Node& self) {
    const auto& g = self.grad;
    const auto& an = a.node();
    const auto& bn = b.node();
    const bool need_a = an->requires_grad;
    const bool need_b = bn->requires_grad;
    float* ga = need_a ? an->grad_buffer().data() : nullptr;
    float* gb = need_b ? bn->grad_buffer().data() : nullptr;
    const auto& avv = an->value;
    const auto& bvv = bn->value;
    auto back = [&](int64_t o, int64_t i, int64_t j) {
      const float go = g[o];
      switch (op) {
        case BinOp::kAdd:
          if (ga) ga[i] += go;
          if (gb) gb[j] += go;
          break;
        case BinOp::kSub:
          if (ga) ga[i] += go;
          if (gb) gb[j] -= go;
          break;
        case BinOp::kMul:
          if (ga) ga[i] += go * bvv[j];
          if (gb) gb[j] += go * avv[i];
          break;
        case BinOp::kDiv:
          if (ga) ga[i] += go / bvv[j];
          if (gb) gb[j] -= go * avv[i] / (bvv[j] * bvv[j]);
          break;
      }
    };
    if (same) {
      for (int64_t i = 0; i < static_cast<int64_t>(g.size()); ++i) back(i, i, i);
    } else {
      for_each_broadcast(plan, back);
    }
  });
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv dfdx) {
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, dfdx](Node& self) {
    const auto& xn = x.node();
    auto& gx = xn->grad_buffer();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(xn->value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv, "div"); }

Tensor add_scalar(const Tensor& x, float s) {
  return unary(x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float s) {
  return unary(x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor rsub_scalar(const Tensor& x, float s) {
  return unary(x, [s](float v) { return s - v; }, [](float, float) { return -1.0f; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary(x, [slope](float v) { return v > 0.0f ? v : slope * v; },
               [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x,
      [](float v) {
        if (v < 0.0f) throw NumericError("sqrt of negative value " + std::to_string(v));
        return std::sqrt(v);
      },
      [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}

Tensor clamp_min(const Tensor& x, float floor) {
  return unary(x, [floor](float v) { return v > floor ? v : floor; },
               [floor](float v, float) { return v > floor ? 1.0f : 0.0f; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result({1}, {static_cast<float>(acc)}, {x}, [x](Node& self) {
    auto& gx = x.node()->grad_buffer();
    const float g = self.grad[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result({1}, {static_cast<float>(acc / n)}, {x}, [x, n](Node& self) {
    auto& gx = x.node()->grad_buffer();
    const float g = static_cast<float>(self.grad[0] / n);
    for (auto& v : gx) v += g;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [x](Node& self) { accumulate_grad(x.node(), self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ContractError("concat of empty list");
  const Shape& first = parts[0].shape();
  const int64_t nd = static_cast<int64_t>(first.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int64_t>(s.size()) != nd) throw ShapeError("concat rank mismatch");
    for (int64_t d = 0; d < nd; ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: dimension " + std::to_string(d) + " differs (" +
                         shape_str(s) + " vs " + shape_str(first) + ")");
      }
    }
    out_shape[axis] += s[axis];
  }
  int64_t outer = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= first[d];
  int64_t inner = 1;
  for (int64_t d = axis + 1; d < nd; ++d) inner *= first[d];

  std::vector<float> out(static_cast<size_t>(numel_of(out_shape)));
  const int64_t out_row = out_shape[axis] * inner;
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t row = p.shape()[axis] * inner;
    const auto& v = p.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offset += row;
  }
  return make_result(out_shape, std::move(out), parts, [parts, axis, outer, inner, out_row](Node& self) {
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t row = p.shape()[axis] * inner;
      if (p.requires_grad()) {
        auto& g = p.node()->grad_buffer();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t j = 0; j < row; ++j) g[o * row + j] += self.grad[o * out_row + off + j];
        }
      }
      off += row;
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  if (x.dim() < 1) throw ShapeError("gather_rows needs at least one dimension");
  const int64_t n = x.size(0);
  const int64_t row = x.numel() / std::max<int64_t>(n, 1);
  Shape shape = x.shape();
  shape[0] = static_cast<int64_t>(rows.size());
  std::vector<float> out(static_cast<size_t>(shape[0] * row));
  const auto& v = x.data();
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) {
      throw ShapeError("gather_rows index " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
    }
    std::copy_n(v.begin() + rows[i] * row, row, out.begin() + static_cast<int64_t>(i) * row);
  }
  return Tensor(shape, std::move(out));
}

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t end) {
  const Shape& s = x.shape();
  const int64_t nd = static_cast<int64_t>(s.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError("slice axis out of range for " + shape_str(s));
  if (start < 0 || end > s[axis] || start >= end) {
    throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(end) +
                     ") out of range for dimension " + std::to_string(axis) + " of " + shape_str(s));
  }
  int64_t outer = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= s[d];
  int64_t inner = 1;
  for (int64_t d = axis + 1; d < nd; ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - start;
  const int64_t in_row = s[axis] * inner;
  const int64_t out_row = (end - start) * inner;
  std::vector<float> out(static_cast<size_t>(outer * out_row));
  const auto& v = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + o * in_row + start * inner, out_row, out.begin() + o * out_row);
  }
  return make_result(out_shape, std::move(out), {x},
                     [x, outer, in_row, out_row, start, inner](Node& self) {
                       auto& g = x.node()->grad_buffer();
                       for (int64_t o = 0; o < outer; ++o) {
                         for (int64_t j = 0; j < out_row; ++j) {
                           g[o * in_row + start * inner + j] += self.grad[o * out_row + j];
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() != 2 || weight.dim() != 2) {
    throw ShapeError("linear expects x [N,in] and weight [out,in], got " + shape_str(x.shape()) +
                     " and " + shape_str(weight.shape()));
  }
  const int n = static_cast<int>(x.size(0));
  const int in = static_cast<int>(x.size(1));
  const int out_dim = static_cast<int>(weight.size(0));
  if (weight.size(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " != weight dimension 1 (" +
                     std::to_string(weight.size(1)) + ")");
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " != [" +
                     std::to_string(out_dim) + "]");
  }
  std::vector<float> out(static_cast<size_t>(n) * out_dim, 0.0f);
  if (bias.defined()) {
    for (int i = 0; i < n; ++i) std::copy_n(bias.data().begin(), out_dim, out.begin() + i * out_dim);
  }
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, out_dim, in, 1.0f, x.data().data(), in,
              weight.data().data(), in, 1.0f, out.data(), out_dim);
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({n, out_dim}, std::move(out), inputs, [x, weight, bias, n, in, out_dim](Node& self) {
    const float* g = self.grad.data();
    if (x.requires_grad()) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, in, out_dim, 1.0f, g, out_dim,
                  weight.data().data(), in, 1.0f, x.node()->grad_buffer().data(), in);
    }
    if (weight.requires_grad()) {
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, out_dim, in, n, 1.0f, g, out_dim,
                  x.data().data(), in, 1.0f, weight.node()->grad_buffer().data(), in);
    }
    if (bias.defined() && bias.requires_grad()) {
      auto& gb = bias.node()->grad_buffer();
      for (int i = 0; i < n; ++i) {
        for (int o = 0; o < out_dim; ++o) gb[o] += g[i * out_dim + o];
      }
    }
  });
}

}  // namespace stylesketch
