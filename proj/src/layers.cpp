#include "stylesketch/layers.hpp"

#include <algorithm>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

SketchMask::SketchMask(Tensor map) : map_(std::move(map)) {
  if (map_.dim() != 4 || map_.size(1) != 1) {
    throw ShapeError("sketch mask must be [N,1,H,W], got " + shape_str(map_.shape()));
  }
  for (float v : map_.data()) {
    if (v != 0.0f && v != 1.0f) throw ContractError("sketch mask is not binary (found " + std::to_string(v) + ")");
  }
}

int64_t SketchMask::contour_pixels() const {
  return static_cast<int64_t>(std::count(map_.data().begin(), map_.data().end(), 1.0f));
}

SketchMask downsample_mask(const SketchMask& sketch, int64_t height, int64_t width) {
  const int64_t h0 = sketch.height();
  const int64_t w0 = sketch.width();
  if (height <= 0 || width <= 0 || h0 % height != 0 || w0 % width != 0 || h0 / height != w0 / width) {
    throw ContractError("cannot downsample a " + std::to_string(h0) + "x" + std::to_string(w0) + " sketch to " +
                        std::to_string(height) + "x" + std::to_string(width) + " by an integer factor");
  }
  const int factor = static_cast<int>(h0 / height);
  if (factor == 1) return sketch;
  NoGradGuard no_grad;
  Tensor pooled = avg_pool2d(sketch.tensor(), factor, factor);
  std::vector<float> bin(pooled.data().size());
  std::transform(pooled.data().begin(), pooled.data().end(), bin.begin(),
                 [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
  return SketchMask(Tensor(pooled.shape(), std::move(bin)));
}

// ---------------------------------------------------------------------------

DmiParams DmiParams::identity(int channels) {
  return {Parameter(Tensor::ones({channels, 1, 1})), Parameter(Tensor::zeros({channels, 1, 1})),
          Parameter(Tensor::ones({channels, 1, 1})), Parameter(Tensor::zeros({channels, 1, 1}))};
}

Tensor dmi_forward(const Tensor& f, const SketchMask& mask, const DmiParams& params, DmiTrace* trace) {
  if (f.dim() != 4) throw ShapeError("dmi expects [N,C,H,W] features, got " + shape_str(f.shape()));
  if (mask.height() != f.size(2) || mask.width() != f.size(3)) {
    throw ShapeError("dmi: mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " does not match feature map " + std::to_string(f.size(2)) + "x" + std::to_string(f.size(3)));
  }
  if (mask.batch() != f.size(0) && mask.batch() != 1) {
    throw ShapeError("dmi: mask batch " + std::to_string(mask.batch()) + " vs features " + std::to_string(f.size(0)));
  }
  const Tensor& m = mask.tensor();
  Tensor f_c = mul(m, f);
  Tensor f_p = mul(rsub_scalar(m, 1.0f), f);
  Tensor contour = add(mul(params.w_c.value(), f_c), params.b_c.value());
  Tensor plain = add(mul(params.w_p.value(), f_p), params.b_p.value());
  if (trace) *trace = {contour, plain};
  return add(contour, plain);
}

void DualMaskInjection::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "w_c", &params.w_c});
  out.push_back({prefix + "b_c", &params.b_c});
  out.push_back({prefix + "w_p", &params.w_p});
  out.push_back({prefix + "b_p", &params.b_p});
}

// ---------------------------------------------------------------------------

StyleMoments moments_of(const Tensor& f) {
  Moments m = instance_stats(f);
  return {m.mean, m.std};
}

Tensor adain(const Tensor& f, const StyleMoments& style, float eps) {
  if (f.dim() != 4) throw ShapeError("adain expects [N,C,H,W], got " + shape_str(f.shape()));
  for (const Tensor* t : {&style.mu, &style.sigma}) {
    if (t->dim() != 4 || t->size(1) != f.size(1)) {
      throw ShapeError("adain: style moments " + shape_str(t->shape()) + " do not match channels of " +
                       shape_str(f.shape()));
    }
  }
  Moments own = instance_stats(f);
  Tensor normalized = div(sub(f, own.mean), add_scalar(own.std, eps));
  return add(mul(style.sigma, normalized), style.mu);
}

IdnPredictor::IdnPredictor(int channels, int spatial, Rng& rng)
    : reduce(channels, channels, 3, 2, 1, rng), global(channels, channels, (spatial + 1) / 2, 1, 0, rng) {}

Tensor IdnPredictor::forward(const Tensor& f) const { return global.forward(leaky_relu(reduce.forward(f), 0.2f)); }

void IdnPredictor::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  reduce.collect_parameters(prefix + "reduce.", out);
  global.collect_parameters(prefix + "global.", out);
}

IdnOutput idn_with_mean(const Tensor& f_styled, const Tensor& mu_pred, float eps) {
  if (mu_pred.dim() != 4 || mu_pred.size(1) != f_styled.size(1) || mu_pred.size(2) != 1 || mu_pred.size(3) != 1) {
    throw ShapeError("idn: predicted mean " + shape_str(mu_pred.shape()) + " is not [N,C,1,1] for " +
                     shape_str(f_styled.shape()));
  }
  Tensor centered = sub(f_styled, mu_pred);
  Tensor sigma = instance_stats(centered).std;
  // Dividing by max(sigma, eps) keeps the unit-variance construction exact for
  // every channel whose spread exceeds eps.
  Tensor content = div(centered, clamp_min(sigma, eps));
  return {mu_pred, sigma, content};
}

IdnOutput idn_forward(const Tensor& f_styled, const IdnPredictor& predictor, float eps) {
  return idn_with_mean(f_styled, predictor.forward(f_styled), eps);
}

// ---------------------------------------------------------------------------

namespace {

// 1 where an adaptive window of a binary map holds any member.
Tensor max_pool_cells(const Tensor& members, int size) {
  Tensor avg = adaptive_avg_pool2d(members, size, size);
  std::vector<float> v(avg.data().begin(), avg.data().end());
  for (float& e : v) e = e > 0.0f ? 1.0f : 0.0f;
  return Tensor(avg.shape(), v);
}

}  // namespace

bool FmtConfig::applies_at(int resolution) const {
  return std::find(resolutions.begin(), resolutions.end(), resolution) != resolutions.end();
}

PoolingChain FmtConfig::chain_for(int resolution) const {
  PoolingChain chain;
  int size = resolution;
  chain.sizes.push_back(size);
  while (size > max_pool_above) {
    size = (size - max_kernel) / max_stride + 1;
    ++chain.max_pools;
    chain.sizes.push_back(size);
  }
  if (size < pooled_size) {
    throw ContractError("FMT pooling chain for " + std::to_string(resolution) + " collapses below " +
                        std::to_string(pooled_size));
  }
  chain.sizes.push_back(pooled_size);
  return chain;
}

FmtPooled fmt_pool(const Tensor& f, const Tensor& members, const FmtConfig& cfg) {
  const PoolingChain chain = cfg.chain_for(static_cast<int>(f.size(2)));
  Tensor t = f;
  Tensor m = members;
  for (int i = 0; i < chain.max_pools; ++i) {
    t = masked_max_pool2d(t, m, cfg.max_kernel, cfg.max_stride);
    NoGradGuard no_grad;
    m = max_pool2d(m, cfg.max_kernel, cfg.max_stride);
  }
  FmtPooled out;
  out.value = masked_adaptive_avg_pool2d(t, m, cfg.pooled_size, cfg.pooled_size);
  NoGradGuard no_grad;
  out.cell_valid = max_pool_cells(m, cfg.pooled_size);
  return out;
}

namespace {

// Per-sample number of populated cells, as [N, 1, 1, 1].
std::vector<float> populated_cells(const Tensor& cell_valid) {
  const int64_t n = cell_valid.size(0);
  const int64_t cells = cell_valid.numel() / n;
  std::vector<float> count(static_cast<size_t>(n), 0.0f);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < cells; ++j) count[i] += cell_valid.data()[i * cells + j];
  }
  return count;
}

// value + (1 - valid) * mean over populated cells; empty cells of `value` hold 0.
// The mean is one double-precision masked average, so equal cells reproduce
// their value exactly.
Tensor fill_empty_cells(const FmtPooled& p) {
  const Tensor branch_mean = masked_adaptive_avg_pool2d(p.value, p.cell_valid, 1, 1);
  return add(p.value, mul(rsub_scalar(p.cell_valid, 1.0f), branch_mean));
}

Tensor has_members(const FmtPooled& p) {
  std::vector<float> count = populated_cells(p.cell_valid);
  for (float& c : count) c = c > 0.0f ? 1.0f : 0.0f;
  return Tensor({p.value.size(0), 1, 1, 1}, count);
}

}  // namespace

FmtBranches fmt_branches(const Tensor& f_style, const SketchMask& style_sketch, const FmtConfig& cfg) {
  const Tensor& ms = style_sketch.tensor();
  Tensor plain_members;
  {
    NoGradGuard no_grad;
    plain_members = rsub_scalar(ms, 1.0f);
  }
  const FmtPooled c = fmt_pool(f_style, ms, cfg);
  const FmtPooled p = fmt_pool(f_style, plain_members, cfg);
  const Tensor c_filled = fill_empty_cells(c);
  const Tensor p_filled = fill_empty_cells(p);
  const Tensor has_c = has_members(c);
  const Tensor has_p = has_members(p);
  return {add(mul(has_c, c_filled), mul(rsub_scalar(has_c, 1.0f), p_filled)),
          add(mul(has_p, p_filled), mul(rsub_scalar(has_p, 1.0f), c_filled))};
}

Tensor fmt(const Tensor& f_style, const SketchMask& style_sketch, const SketchMask& input_sketch, const FmtConfig& cfg) {
  if (f_style.dim() != 4) throw ShapeError("fmt expects [N,C,H,W] style features, got " + shape_str(f_style.shape()));
  const int64_t h = f_style.size(2);
  const int64_t w = f_style.size(3);
  if (h != w || !cfg.applies_at(static_cast<int>(h))) {
    throw ContractError("FMT is not configured for resolution " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (h % cfg.pooled_size != 0) {
    throw ContractError("FMT resolution " + std::to_string(h) + " is not a multiple of " +
                        std::to_string(cfg.pooled_size));
  }
  for (const SketchMask* s : {&style_sketch, &input_sketch}) {
    if (s->height() != h || s->width() != w) {
      throw ShapeError("fmt: sketch " + std::to_string(s->height()) + "x" + std::to_string(s->width()) +
                       " does not match features " + std::to_string(h) + "x" + std::to_string(w));
    }
  }
  // 1 + 2: split by the style sketch and pool each part to 4x4
  const FmtBranches b = fmt_branches(f_style, style_sketch, cfg);
  // 3: tile back to full size
  const int factor = static_cast<int>(h / cfg.pooled_size);
  Tensor contour_tiled = upsample_nearest(b.contour, factor);
  Tensor plain_tiled = upsample_nearest(b.plain, factor);
  // 4 + 5: re-mask by the input sketch and sum
  const Tensor& mi = input_sketch.tensor();
  return add(mul(mi, contour_tiled), mul(rsub_scalar(mi, 1.0f), plain_tiled));
}

// ---------------------------------------------------------------------------

AttnResBlock::AttnResBlock(int channels, int style_dim, Rng& rng)
    : conv1(channels, channels, 3, 1, 1, rng, /*bias=*/false), conv2(channels, channels, 3, 1, 1, rng), gate(style_dim, channels, rng) {}

AttnResBlock::Parts AttnResBlock::forward_parts(const Tensor& f, const Tensor& v_style) const {
  if (f.dim() != 4) throw ShapeError("attn_res_block expects [N,C,H,W], got " + shape_str(f.shape()));
  const int64_t c = f.size(1);
  if (gate.weight.shape()[0] != c) {
    throw ShapeError("attn_res_block: gate produces " + std::to_string(gate.weight.shape()[0]) +
                     " channels but features have " + std::to_string(c));
  }
  if (v_style.dim() != 2 || v_style.size(0) != f.size(0)) {
    throw ShapeError("attn_res_block: style vector " + shape_str(v_style.shape()) + " does not match batch of " +
                     shape_str(f.shape()));
  }
  Tensor residual = conv2.forward(leaky_relu(instance_norm(conv1.forward(f), kNormEps), 0.2f));
  Tensor w = reshape(sigmoid(gate.forward(v_style)), {f.size(0), c, 1, 1});
  return {add(f, mul(w, residual)), residual, w};
}

void AttnResBlock::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  conv1.collect_parameters(prefix + "conv1.", out);
  conv2.collect_parameters(prefix + "conv2.", out);
  gate.collect_parameters(prefix + "gate.", out);
}

}  // namespace stylesketch
