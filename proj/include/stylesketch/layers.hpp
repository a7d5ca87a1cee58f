#pragma once

#include <vector>

#include "stylesketch/nn.hpp"
#include "stylesketch/tensor.hpp"

namespace stylesketch {

inline constexpr float kNormEps = 1e-5f;

// Binary contour map [N, 1, H, W]; 1 marks a contour pixel.
class SketchMask {
 public:
  SketchMask() = default;
  // Throws ContractError unless every value is exactly 0 or 1 and ShapeError
  // unless the tensor is [N, 1, H, W].
  explicit SketchMask(Tensor map);

  const Tensor& tensor() const { return map_; }
  int64_t batch() const { return map_.size(0); }
  int64_t height() const { return map_.size(2); }
  int64_t width() const { return map_.size(3); }
  int64_t contour_pixels() const;

 private:
  Tensor map_;
};

// Average-pools by the integer factor H0/H and marks any cell holding a
// contour pixel.
SketchMask downsample_mask(const SketchMask& sketch, int64_t height, int64_t width);

// ---------------------------------------------------------------------------
// Dual-mask injection: separate per-channel affine maps for the contour and
// plain parts of a feature map.

struct DmiParams {
  Parameter w_c;
  Parameter b_c;
  Parameter w_p;
  Parameter b_p;

  static DmiParams identity(int channels);
};

struct DmiTrace {
  Tensor contour;  // w_c * (M * f) + b_c
  Tensor plain;    // w_p * ((1 - M) * f) + b_p
};

Tensor dmi_forward(const Tensor& f, const SketchMask& mask, const DmiParams& params, DmiTrace* trace = nullptr);

class DualMaskInjection : public Module {
 public:
  DualMaskInjection() = default;
  explicit DualMaskInjection(int channels) : params(DmiParams::identity(channels)) {}

  Tensor forward(const Tensor& f, const SketchMask& mask, DmiTrace* trace = nullptr) const {
    return dmi_forward(f, mask, params, trace);
  }
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  DmiParams params;
};

// ---------------------------------------------------------------------------
// AdaIN and its inverse.

struct StyleMoments {
  Tensor mu;     // [N, C, 1, 1]
  Tensor sigma;  // [N, C, 1, 1], >= 0
};

StyleMoments moments_of(const Tensor& f);

// sigma_style * (f - mu(f)) / (sigma(f) + eps) + mu_style
Tensor adain(const Tensor& f, const StyleMoments& style, float eps = kNormEps);

// conv 3x3 stride 2 -> leaky ReLU -> conv with a kernel covering the whole
// remaining map, giving one predicted mean per channel.
class IdnPredictor : public Module {
 public:
  IdnPredictor() = default;
  IdnPredictor(int channels, int spatial, Rng& rng);

  Tensor forward(const Tensor& f) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Conv2d reduce;
  Conv2d global;
};

struct IdnOutput {
  Tensor mu_pred;     // [N, C, 1, 1]
  Tensor sigma_pred;  // [N, C, 1, 1]
  Tensor f_content;   // [N, C, H, W]
};

IdnOutput idn_forward(const Tensor& f_styled, const IdnPredictor& predictor, float eps = kNormEps);
// Same construction with an externally supplied mean (predictor bypassed).
IdnOutput idn_with_mean(const Tensor& f_styled, const Tensor& mu_pred, float eps = kNormEps);

// ---------------------------------------------------------------------------
// Feature-map transformation.

struct PoolingChain {
  int max_pools = 0;            // number of max_pool(5, 3) applications
  std::vector<int> sizes;       // spatial size after each stage, input first
};

struct FmtConfig {
  std::vector<int> resolutions{16, 32, 64};
  int pooled_size = 4;
  int max_kernel = 5;
  int max_stride = 3;
  // max_pool(5,3) is applied while the map is larger than this.
  int max_pool_above = 10;

  bool applies_at(int resolution) const;
  PoolingChain chain_for(int resolution) const;
};

// One branch after member-restricted pooling: values [N, C, 4, 4] and which
// cells saw at least one member [N, 1, 4, 4].
struct FmtPooled {
  Tensor value;
  Tensor cell_valid;
};

// Step 2 for one branch: max_pool(5, 3) while larger than 10, then an
// adaptive average to pooled_size, each pooling only over branch members.
FmtPooled fmt_pool(const Tensor& f, const Tensor& members, const FmtConfig& cfg);

struct FmtBranches {
  Tensor contour;  // [N, C, 4, 4]
  Tensor plain;    // [N, C, 4, 4]
};

// Steps 1 and 2. Cells without members take the mean of their branch's
// populated cells; a branch with no members at all takes the other branch.
FmtBranches fmt_branches(const Tensor& f_style, const SketchMask& style_sketch, const FmtConfig& cfg);

Tensor fmt(const Tensor& f_style, const SketchMask& style_sketch, const SketchMask& input_sketch, const FmtConfig& cfg);

// ---------------------------------------------------------------------------
// Residual block whose residual branch is channel-gated by the style vector.

class AttnResBlock : public Module {
 public:
  struct Parts {
    Tensor out;
    Tensor residual;  // conv2(act(norm(conv1(f))))
    Tensor gate;      // sigmoid(linear(v_style)) as [N, C, 1, 1]
  };

  AttnResBlock() = default;
  AttnResBlock(int channels, int style_dim, Rng& rng);

  Parts forward_parts(const Tensor& f, const Tensor& v_style) const;
  Tensor forward(const Tensor& f, const Tensor& v_style) const { return forward_parts(f, v_style).out; }
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Conv2d conv1;  // no bias: instance norm removes any per-channel offset
  Conv2d conv2;
  Linear gate;
};

}  // namespace stylesketch
