#pragma once

#include <vector>

#include "stylesketch/tensor.hpp"

namespace stylesketch {

// style_vec and sketch_pred are both undefined for a realness-only D; the
// style and content loss terms are then omitted.
struct DiscriminatorOutput {
  Tensor style_vec;       // [N, S]
  Tensor sketch_pred;     // [N, 1, H, W], in [0, 1]
  Tensor realness_logit;  // [N, 1]

  bool has_heads() const { return style_vec.defined() && sketch_pred.defined(); }
};

struct LossWeights {
  float adv = 1.0f;
  float style = 1.0f;
  float content = 1.0f;
  float recon = 10.0f;
  float grad = 1.0f;
  // Also match gradient statistics of E's activations (taps at least 16 wide),
  // weighted by `grad`.
  bool grad_on_activations = false;

  // Throws ConfigError unless every weight is finite and nonnegative and at
  // least one is positive.
  void validate() const;
};

struct DLossTerms {
  Tensor total;
  Tensor real;     // bce(real, 1)
  Tensor fake;     // bce(fake, 0)
  Tensor style;    // mse(real style_vec, target); undefined without heads
  Tensor content;  // mse(real sketch_pred, target); undefined without heads
};

struct GLossTerms {
  Tensor total;
  Tensor adv;
  Tensor content;  // undefined without D heads
  Tensor style;    // undefined without D heads
  Tensor recon;    // undefined for unpaired batches
  Tensor grad;
};

DLossTerms d_loss_terms(const DiscriminatorOutput& real, const DiscriminatorOutput& fake, const Tensor& style_target,
                        const Tensor& sketch_target);
inline Tensor d_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake, const Tensor& style_target,
                     const Tensor& sketch_target) {
  return d_loss_terms(real, fake, style_target, sketch_target).total;
}

GLossTerms g_loss_terms(const DiscriminatorOutput& fake, const Tensor& e_style_of_ref, const Tensor& sketch_in,
                        const Tensor& generated, const Tensor& style_img, bool paired, const LossWeights& w);
inline Tensor g_loss(const DiscriminatorOutput& fake, const Tensor& e_style_of_ref, const Tensor& sketch_in,
                     const Tensor& generated, const Tensor& style_img, bool paired, const LossWeights& w) {
  return g_loss_terms(fake, e_style_of_ref, sketch_in, generated, style_img, paired, w).total;
}

inline constexpr int kGradientGrid = 8;
inline constexpr float kGradientEps = 1e-5f;

// Mean over the 8x8 patch grid (and batch) of squared differences of the
// per-patch mean and std of forward-difference gradients, summed over both
// directions and all channels.
Tensor gradient_match(const Tensor& image, const Tensor& target);

inline constexpr int kMinActivationGradientSide = 16;

// Mean of gradient_match over the tap pairs whose side is at least
// kMinActivationGradientSide; undefined when no tap qualifies.
Tensor activation_gradient_match(const std::vector<Tensor>& generated_taps, const std::vector<Tensor>& reference_taps);

// Per-patch terms [N, 2C, 8, 8] (x-direction channels first) whose sum over
// everything, divided by 64 N, is gradient_match.
Tensor gradient_match_terms(const Tensor& image, const Tensor& target);

}  // namespace stylesketch
