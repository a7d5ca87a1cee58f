#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "stylesketch/gradcheck.hpp"
#include "stylesketch/layers.hpp"
#include "stylesketch/losses.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace {

using Built = std::pair<TensorFn, std::vector<Tensor>>;

Tensor leaf(const Tensor& t) { return Tensor(t.shape(), {t.data().begin(), t.data().end()}, true); }

Tensor uniform_leaf(const Shape& s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  return leaf(uniform_tensor(s, lo, hi, rng));
}

// Distinct values bounded away from zero with pairwise gaps of `gap`, so
// kinks (relu, clamp, max selection) are never crossed by a perturbation of h.
Tensor separated_leaf(const Shape& s, Rng& rng, float gap = 4e-3f) {
  const int64_t n = numel_of(s);
  std::vector<int64_t> rank(static_cast<size_t>(n));
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<float> v(rank.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const float mag = 0.05f + static_cast<float>(rank[i] / 2) * 2.0f * gap;
    v[i] = rank[i] % 2 == 0 ? mag : -mag - gap;
  }
  return Tensor(s, v, true);
}

Tensor constant_mask(const Shape& s, Rng& rng, double p = 0.3) {
  std::bernoulli_distribution bit(p);
  std::vector<float> v(static_cast<size_t>(numel_of(s)));
  for (float& e : v) e = bit(rng) ? 1.0f : 0.0f;
  return Tensor(s, v);
}

Tensor flat_cat(const std::vector<Tensor>& parts) {
  std::vector<Tensor> flat;
  for (const Tensor& p : parts) flat.push_back(reshape(p, {1, p.numel()}));
  return concat(flat, 1);
}

std::vector<Tensor> param_values(Module& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) out.push_back(p->value());
  return out;
}

GradcheckCase unary(std::string name, std::function<Tensor(const Tensor&)> op, bool separated = false) {
  return {std::move(name), [op, separated](Rng& rng) -> Built {
            Tensor x = separated ? separated_leaf({2, 3, 4}, rng) : uniform_leaf({2, 3, 4}, rng);
            return {[op](const std::vector<Tensor>& in) { return op(in[0]); }, {x}};
          }};
}

std::vector<GradcheckCase> build_cases() {
  std::vector<GradcheckCase> cases;

  // -- elementwise and shaping --------------------------------------------
  cases.push_back({"add_broadcast", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
                             {uniform_leaf({2, 3, 2, 2}, rng), uniform_leaf({3, 1, 1}, rng)}};
                   }});
  cases.push_back({"sub_broadcast", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return sub(in[0], in[1]); },
                             {uniform_leaf({2, 3, 2, 2}, rng), uniform_leaf({1}, rng)}};
                   }});
  cases.push_back({"mul_broadcast", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
                             {uniform_leaf({2, 3, 2, 2}, rng), uniform_leaf({3, 1, 1}, rng)}};
                   }});
  cases.push_back({"div_broadcast", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return div(in[0], in[1]); },
                             {uniform_leaf({2, 3, 2, 2}, rng), uniform_leaf({3, 1, 1}, rng, 0.5f, 1.5f)}};
                   }});
  cases.push_back(unary("scalar_ops", [](const Tensor& x) { return rsub_scalar(add_scalar(mul_scalar(x, 1.7f), 0.3f), 2.0f); }));
  cases.push_back(unary("relu", [](const Tensor& x) { return relu(x); }, true));
  cases.push_back(unary("leaky_relu", [](const Tensor& x) { return leaky_relu(x, 0.2f); }, true));
  cases.push_back(unary("sigmoid", [](const Tensor& x) { return sigmoid(mul_scalar(x, 3.0f)); }));
  cases.push_back(unary("tanh", [](const Tensor& x) { return tanh(mul_scalar(x, 2.0f)); }));
  cases.push_back(unary("square", [](const Tensor& x) { return square(x); }));
  cases.push_back({"sqrt", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return sqrt(in[0]); },
                             {uniform_leaf({2, 3, 4}, rng, 0.2f, 2.0f)}};
                   }});
  cases.push_back(unary("clamp_min", [](const Tensor& x) { return clamp_min(x, 0.0f); }, true));
  cases.push_back(unary("sum", [](const Tensor& x) { return sum(x); }));
  cases.push_back(unary("mean", [](const Tensor& x) { return mean(x); }));
  cases.push_back(unary("reshape", [](const Tensor& x) { return reshape(x, {4, 6}); }));
  cases.push_back({"concat_slice", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) {
                               Tensor c = concat({in[0], in[1]}, 1);
                               return mul(slice(c, 1, 1, 4), slice(c, 1, 0, 3));
                             },
                             {uniform_leaf({2, 2, 3, 3}, rng), uniform_leaf({2, 3, 3, 3}, rng)}};
                   }});
  cases.push_back({"linear", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); },
                             {uniform_leaf({3, 5}, rng), uniform_leaf({4, 5}, rng), uniform_leaf({4}, rng)}};
                   }});
  cases.push_back({"mse", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return mse(in[0], in[1]); },
                             {uniform_leaf({2, 6}, rng), uniform_leaf({2, 6}, rng)}};
                   }});
  cases.push_back({"bce_with_logits", [](Rng& rng) -> Built {
                     Tensor target = constant_mask({2, 5}, rng, 0.5);
                     return {[target](const std::vector<Tensor>& in) { return bce_with_logits(in[0], target); },
                             {uniform_leaf({2, 5}, rng, -3.0f, 3.0f)}};
                   }});
  cases.push_back({"cross_entropy", [](Rng& rng) -> Built {
                     std::uniform_int_distribution<int> label(0, 3);
                     std::vector<int> labels{label(rng), label(rng), label(rng)};
                     return {[labels](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels); },
                             {uniform_leaf({3, 4}, rng, -2.0f, 2.0f)}};
                   }});

  // -- spatial --------------------------------------------------------------
  cases.push_back({"conv2d_s1p1", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
                             {uniform_leaf({2, 2, 5, 5}, rng), uniform_leaf({3, 2, 3, 3}, rng), uniform_leaf({3}, rng)}};
                   }});
  cases.push_back({"conv2d_s2p0", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 2, 0); },
                             {uniform_leaf({1, 3, 7, 7}, rng), uniform_leaf({2, 3, 3, 3}, rng), uniform_leaf({2}, rng)}};
                   }});
  cases.push_back({"max_pool2d", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return max_pool2d(in[0], 5, 3); },
                             {separated_leaf({1, 2, 11, 11}, rng)}};
                   }});
  cases.push_back({"avg_pool2d", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return avg_pool2d(in[0], 3, 2); },
                             {uniform_leaf({2, 2, 7, 7}, rng)}};
                   }});
  cases.push_back({"masked_max_pool2d", [](Rng& rng) -> Built {
                     Tensor mask = constant_mask({2, 1, 11, 11}, rng, 0.15);
                     return {[mask](const std::vector<Tensor>& in) { return masked_max_pool2d(in[0], mask, 5, 3); },
                             {separated_leaf({2, 2, 11, 11}, rng)}};
                   }});
  cases.push_back({"masked_adaptive_avg_pool2d", [](Rng& rng) -> Built {
                     Tensor mask = constant_mask({1, 1, 10, 10}, rng, 0.2);
                     return {[mask](const std::vector<Tensor>& in) {
                               return masked_adaptive_avg_pool2d(in[0], mask, 4, 4);
                             },
                             {uniform_leaf({2, 3, 10, 10}, rng)}};
                   }});
  cases.push_back({"adaptive_avg_pool2d", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return adaptive_avg_pool2d(in[0], 4, 4); },
                             {uniform_leaf({1, 2, 6, 10}, rng)}};
                   }});
  cases.push_back({"global_avg_pool", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return global_avg_pool(in[0]); },
                             {uniform_leaf({2, 3, 4, 4}, rng)}};
                   }});
  cases.push_back({"upsample_nearest", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return upsample_nearest(in[0], 3); },
                             {uniform_leaf({1, 2, 3, 3}, rng)}};
                   }});
  cases.push_back({"downsample_avg", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return downsample_avg(in[0], 2); },
                             {uniform_leaf({1, 2, 6, 6}, rng)}};
                   }});
  cases.push_back({"forward_diff", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) {
                               return flat_cat({forward_diff(in[0], 2), forward_diff(in[0], 3)});
                             },
                             {uniform_leaf({1, 2, 4, 5}, rng)}};
                   }});

  // -- statistics -----------------------------------------------------------
  cases.push_back({"instance_stats", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) {
                               Moments m = instance_stats(in[0]);
                               return flat_cat({m.mean, m.std});
                             },
                             {uniform_leaf({2, 3, 4, 4}, rng)}};
                   }});
  cases.push_back({"instance_norm", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return instance_norm(in[0], kNormEps); },
                             {uniform_leaf({2, 2, 4, 4}, rng)}};
                   }});
  cases.push_back({"patch_stats", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) {
                               Moments m = patch_stats(in[0], 3, 3, 3, 3, kNormEps);
                               return flat_cat({m.mean, m.std});
                             },
                             {uniform_leaf({1, 2, 8, 8}, rng)}};
                   }});

  // -- layers ---------------------------------------------------------------
  cases.push_back({"dmi", [](Rng& rng) -> Built {
                     auto layer = std::make_shared<DualMaskInjection>(3);
                     for (Parameter* p : layer->parameters()) {
                       Tensor init = uniform_tensor(p->shape(), -1.5f, 1.5f, rng);
                       std::copy(init.data().begin(), init.data().end(), p->mutable_value().begin());
                     }
                     SketchMask mask(constant_mask({2, 1, 5, 5}, rng));
                     std::vector<Tensor> inputs{uniform_leaf({2, 3, 5, 5}, rng)};
                     for (const Tensor& t : param_values(*layer)) inputs.push_back(t);
                     return {[layer, mask](const std::vector<Tensor>& in) { return layer->forward(in[0], mask); }, inputs};
                   }});
  cases.push_back({"adain", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return adain(in[0], {in[1], in[2]}); },
                             {uniform_leaf({2, 3, 4, 4}, rng), uniform_leaf({2, 3, 1, 1}, rng),
                              uniform_leaf({2, 3, 1, 1}, rng, 0.2f, 1.5f)}};
                   }});
  cases.push_back({"idn", [](Rng& rng) -> Built {
                     auto pred = std::make_shared<IdnPredictor>(3, 6, rng);
                     Tensor f;
                     for (;;) {
                       f = uniform_leaf({2, 3, 6, 6}, rng);
                       NoGradGuard no_grad;
                       Tensor pre = pred->reduce.forward(f);
                       if (std::all_of(pre.data().begin(), pre.data().end(), [](float v) { return std::abs(v) > 4e-3f; })) break;
                     }
                     std::vector<Tensor> inputs{f};
                     for (const Tensor& t : param_values(*pred)) inputs.push_back(t);
                     return {[pred](const std::vector<Tensor>& in) {
                               IdnOutput o = idn_forward(in[0], *pred);
                               return flat_cat({o.mu_pred, o.sigma_pred, o.f_content});
                             },
                             inputs};
                   }});
  cases.push_back({"fmt_path", [](Rng& rng) -> Built {
                     SketchMask style(constant_mask({1, 1, 16, 16}, rng));
                     SketchMask input(constant_mask({1, 1, 16, 16}, rng));
                     return {[style, input](const std::vector<Tensor>& in) { return fmt(in[0], style, input, FmtConfig{}); },
                             {separated_leaf({1, 2, 16, 16}, rng)}};
                   }});
  cases.push_back({"fmt_path_sparse", [](Rng& rng) -> Built {
                     SketchMask style(constant_mask({1, 1, 16, 16}, rng, 0.03));
                     SketchMask input(constant_mask({1, 1, 16, 16}, rng));
                     return {[style, input](const std::vector<Tensor>& in) { return fmt(in[0], style, input, FmtConfig{}); },
                             {separated_leaf({1, 2, 16, 16}, rng)}};
                   }});
  cases.push_back({"fmt_path_32", [](Rng& rng) -> Built {
                     SketchMask style(constant_mask({1, 1, 32, 32}, rng));
                     SketchMask input(constant_mask({1, 1, 32, 32}, rng));
                     return {[style, input](const std::vector<Tensor>& in) { return fmt(in[0], style, input, FmtConfig{}); },
                             {separated_leaf({1, 1, 32, 32}, rng)}};
                   }});
  // The identity path keeps |out| near |f|, so float32 round-off in the
  // forward swamps the small style-vector gradient at h = 1e-3; a larger step
  // with a proportionally larger kink margin keeps the difference quotient clean.
  constexpr float kAttnStep = 4e-3f;
  cases.push_back({"attn_res_block",
                   [](Rng& rng) -> Built {
                     auto block = std::make_shared<AttnResBlock>(3, 5, rng);
                     // Redraw until no normalized pre-activation sits within the
                     // reach of an h-perturbation of the leaky ReLU kink.
                     Tensor f;
                     for (;;) {
                       f = uniform_leaf({2, 3, 5, 5}, rng);
                       NoGradGuard no_grad;
                       Tensor pre = instance_norm(block->conv1.forward(f), kNormEps);
                       if (std::all_of(pre.data().begin(), pre.data().end(),
                                       [](float v) { return std::abs(v) > 4.0f * kAttnStep; })) {
                         break;
                       }
                     }
                     std::vector<Tensor> inputs{f, uniform_leaf({2, 5}, rng)};
                     for (const Tensor& t : param_values(*block)) inputs.push_back(t);
                     return {[block](const std::vector<Tensor>& in) { return block->forward(in[0], in[1]); }, inputs};
                   },
                   GradcheckOptions{kAttnStep}});
  // The per-patch term map is checked under a random projection; the scalar
  // loss is checked near its minimum, where its float32 value carries enough
  // precision for differences at h = 1e-3.
  cases.push_back({"gradient_match_terms", [](Rng& rng) -> Built {
                     return {[](const std::vector<Tensor>& in) { return gradient_match_terms(in[0], in[1]); },
                             {uniform_leaf({2, 2, 16, 16}, rng), uniform_leaf({2, 2, 16, 16}, rng)}};
                   }});
  cases.push_back({"gradient_match", [](Rng& rng) -> Built {
                     Tensor image = uniform_tensor({1, 2, 16, 16}, -1.0f, 1.0f, rng);
                     Tensor target = add(image, uniform_tensor({1, 2, 16, 16}, -0.1f, 0.1f, rng));
                     return {[](const std::vector<Tensor>& in) { return gradient_match(in[0], in[1]); },
                             {leaf(image), leaf(target)}};
                   }});
  return cases;
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_cases() {
  static const std::vector<GradcheckCase> cases = build_cases();
  return cases;
}

}  // namespace stylesketch
