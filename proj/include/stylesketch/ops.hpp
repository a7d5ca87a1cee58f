#pragma once

#include <vector>

#include "stylesketch/tensor.hpp"

// Differentiable tensor operations. 4-D data is laid out [N, C, H, W].
namespace stylesketch {

// Broadcasting binary ops (numpy rules, shapes right-aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);
// s - x
Tensor rsub_scalar(const Tensor& x, float s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, float s) { return mul_scalar(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, float s) { return add_scalar(a, s); }

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
// max(x, floor); gradient passes where x > floor.
Tensor clamp_min(const Tensor& x, float floor);

// Full reductions to a [1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis = 1);
// Half-open range [start, end) along `axis`.
// Rows of x along axis 0 in the given order, copied without history.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t end);

// x [N, in], weight [out, in], bias [out] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// weight [C_out, C_in, k, k], bias [C_out] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

// Floor-mode output sizes, no padding.
Tensor max_pool2d(const Tensor& x, int kernel, int stride);
Tensor avg_pool2d(const Tensor& x, int kernel, int stride);
// Splits each axis into out_size contiguous, non-overlapping windows
// [floor(i*H/out), floor((i+1)*H/out)) and averages each.
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);
Tensor global_avg_pool(const Tensor& x);

// Pooling restricted to the members of a binary [N|1, 1, H, W] mask. Windows
// with no members produce 0 and propagate no gradient.
Tensor masked_max_pool2d(const Tensor& x, const Tensor& mask, int kernel, int stride);
Tensor masked_adaptive_avg_pool2d(const Tensor& x, const Tensor& mask, int out_h, int out_w);

Tensor upsample_nearest(const Tensor& x, int factor);
Tensor downsample_avg(const Tensor& x, int factor);

struct Moments {
  Tensor mean;
  Tensor std;
};

// Per-(sample, channel) spatial mean and population std, both [N, C, 1, 1].
Moments instance_stats(const Tensor& x);
// (x - mean) / sqrt(var + eps), no affine.
Tensor instance_norm(const Tensor& x, float eps);

// Forward difference along axis 2 (rows) or 3 (columns); that axis shrinks by one.
Tensor forward_diff(const Tensor& x, int axis);

// Statistics over a grid of fixed-size patches. Patch (i, j) covers rows
// [i*patch_h, min((i+1)*patch_h, H)) and the matching columns; every patch must be
// nonempty. Returns mean and sqrt(var + eps), each [N, C, grid_h, grid_w].
Moments patch_stats(const Tensor& x, int grid_h, int grid_w, int patch_h, int patch_w, float eps);

// Losses, reduced by mean to a [1] tensor.
Tensor mse(const Tensor& a, const Tensor& b);
Tensor bce_with_logits(const Tensor& logit, const Tensor& target);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace stylesketch
