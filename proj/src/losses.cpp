#include "stylesketch/losses.hpp"

#include <cmath>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

void LossWeights::validate() const {
  for (float v : {adv, style, content, recon, grad}) {
    if (!std::isfinite(v) || v < 0.0f) throw ConfigError("loss weights must be finite and nonnegative");
  }
  if (adv + style + content + recon + grad <= 0.0f) throw ConfigError("at least one loss weight must be positive");
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

DLossTerms d_loss_terms(const DiscriminatorOutput& real, const DiscriminatorOutput& fake, const Tensor& style_target,
                        const Tensor& sketch_target) {
  DLossTerms t;
  t.real = bce_with_logits(real.realness_logit, Tensor::ones(real.realness_logit.shape()));
  t.fake = bce_with_logits(fake.realness_logit, Tensor::zeros(fake.realness_logit.shape()));
  t.total = t.real + t.fake;
  if (real.has_heads()) {
    require_same(real.style_vec, style_target, "d_loss style target");
    require_same(real.sketch_pred, sketch_target, "d_loss sketch target");
    t.style = mse(real.style_vec, style_target);
    t.content = mse(real.sketch_pred, sketch_target);
    t.total = t.total + t.style + t.content;
  }
  return t;
}

GLossTerms g_loss_terms(const DiscriminatorOutput& fake, const Tensor& e_style_of_ref, const Tensor& sketch_in,
                        const Tensor& generated, const Tensor& style_img, bool paired, const LossWeights& w) {
  require_same(generated, style_img, "g_loss generated vs style image");
  GLossTerms t;
  t.adv = bce_with_logits(fake.realness_logit, Tensor::ones(fake.realness_logit.shape()));
  t.grad = gradient_match(generated, style_img);
  t.total = t.adv * w.adv + t.grad * w.grad;
  if (fake.has_heads()) {
    require_same(fake.style_vec, e_style_of_ref, "g_loss style target");
    require_same(fake.sketch_pred, sketch_in, "g_loss sketch target");
    t.content = mse(fake.sketch_pred, sketch_in);
    t.style = mse(fake.style_vec, e_style_of_ref);
    t.total = t.total + t.content * w.content + t.style * w.style;
  }
  if (paired) {
    t.recon = mse(generated, style_img);
    t.total = t.total + t.recon * w.recon;
  }
  return t;
}

Tensor activation_gradient_match(const std::vector<Tensor>& generated_taps, const std::vector<Tensor>& reference_taps) {
  if (generated_taps.size() != reference_taps.size()) {
    throw ShapeError("activation_gradient_match: " + std::to_string(generated_taps.size()) + " vs " +
                     std::to_string(reference_taps.size()) + " taps");
  }
  Tensor acc;
  int used = 0;
  for (size_t i = 0; i < generated_taps.size(); ++i) {
    if (generated_taps[i].size(2) < kMinActivationGradientSide) continue;
    const Tensor term = gradient_match(generated_taps[i], reference_taps[i]);
    acc = used == 0 ? term : add(acc, term);
    ++used;
  }
  return used == 0 ? Tensor() : mul_scalar(acc, 1.0f / static_cast<float>(used));
}

Tensor gradient_match_terms(const Tensor& image, const Tensor& target) {
  require_same(image, target, "gradient_match");
  if (image.dim() != 4) throw ShapeError("gradient_match expects [N,C,H,W], got " + shape_str(image.shape()));
  const int64_t h = image.size(2);
  const int64_t w = image.size(3);
  if (h % kGradientGrid != 0 || w % kGradientGrid != 0) {
    throw ContractError("gradient_match needs spatial dims divisible by 8, got " + shape_str(image.shape()));
  }
  const int ph = static_cast<int>(h / kGradientGrid);
  const int pw = static_cast<int>(w / kGradientGrid);
  std::vector<Tensor> per_direction;
  for (int axis : {3, 2}) {
    Moments a = patch_stats(forward_diff(image, axis), kGradientGrid, kGradientGrid, ph, pw, kGradientEps);
    Moments b = patch_stats(forward_diff(target, axis), kGradientGrid, kGradientGrid, ph, pw, kGradientEps);
    per_direction.push_back(square(a.mean - b.mean) + square(a.std - b.std));
  }
  return concat(per_direction, 1);
}

Tensor gradient_match(const Tensor& image, const Tensor& target) {
  Tensor terms = gradient_match_terms(image, target);
  return mul_scalar(sum(terms), 1.0f / static_cast<float>(kGradientGrid * kGradientGrid * image.size(0)));
}

}  // namespace stylesketch
