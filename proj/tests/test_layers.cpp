#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stylesketch/error.hpp"
#include "stylesketch/layers.hpp"
#include "stylesketch/ops.hpp"

using namespace stylesketch;

namespace {

void set_values(Parameter& p, std::vector<float> v) {
  ASSERT_EQ(static_cast<int64_t>(v.size()), p.numel());
  std::copy(v.begin(), v.end(), p.mutable_value().begin());
}

Tensor transpose_hw(const Tensor& t) {
  const int64_t n = t.size(0), c = t.size(1), h = t.size(2), w = t.size(3);
  std::vector<float> out(t.data().size());
  for (int64_t a = 0; a < n; ++a)
    for (int64_t b = 0; b < c; ++b)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) out[((a * c + b) * w + x) * h + y] = t.at({a, b, y, x});
  return Tensor({n, c, w, h}, out);
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(SketchMask, RejectsNonBinaryAndWrongRank) {
  EXPECT_THROW(SketchMask(Tensor({1, 1, 1, 2}, {0.0f, 0.5f})), ContractError);
  EXPECT_THROW(SketchMask(Tensor::zeros({1, 2, 2, 2})), ShapeError);
}

TEST(DownsampleMask, AllZeroStaysZero) {
  SketchMask m(Tensor::zeros({1, 1, 64, 64}));
  for (int r : {32, 16, 8}) EXPECT_EQ(downsample_mask(m, r, r).contour_pixels(), 0);
}

TEST(DownsampleMask, SinglePixelMarksItsCell) {
  std::vector<float> v(16, 0.0f);
  v[0] = 1.0f;
  SketchMask d = downsample_mask(SketchMask(Tensor({1, 1, 4, 4}, v)), 2, 2);
  EXPECT_EQ(d.contour_pixels(), 1);
  EXPECT_EQ(d.tensor().at({0, 0, 0, 0}), 1.0f);
}

TEST(DownsampleMask, MatchesAnyNonzeroWindowScan) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor raw = oracle::random_mask({2, 1, 32, 32}, 0.03, rng);
    SketchMask d = downsample_mask(SketchMask(raw), 8, 8);
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t i = 0; i < 8; ++i)
        for (int64_t j = 0; j < 8; ++j) {
          bool any = false;
          for (int64_t y = 4 * i; y < 4 * i + 4; ++y)
            for (int64_t x = 4 * j; x < 4 * j + 4; ++x) any = any || raw.at({n, 0, y, x}) == 1.0f;
          EXPECT_EQ(d.tensor().at({n, 0, i, j}), any ? 1.0f : 0.0f);
        }
  }
}

TEST(DownsampleMask, NonIntegerFactorIsRejected) {
  SketchMask m(Tensor::zeros({1, 1, 10, 10}));
  EXPECT_THROW(downsample_mask(m, 4, 4), ContractError);
}

// ---------------------------------------------------------------------------

TEST(Dmi, IdentityParametersAreBitExact) {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tensor f = normal_tensor({2, 4, 8, 8}, 0.0f, 3.0f, rng);
    SketchMask m(oracle::random_mask({2, 1, 8, 8}, 0.4, rng));
    Tensor out = dmi_forward(f, m, DmiParams::identity(4));
    for (int64_t i = 0; i < f.numel(); ++i) ASSERT_EQ(out.data()[i], f.data()[i]);
  }
}

TEST(Dmi, AllContourMaskLeavesOnlyPlainBias) {
  Rng rng(1);
  DmiParams p = DmiParams::identity(2);
  set_values(p.w_c, {2.0f, -1.0f});
  set_values(p.b_c, {0.5f, 0.25f});
  set_values(p.w_p, {3.0f, 7.0f});
  set_values(p.b_p, {-1.0f, 2.0f});
  Tensor f = uniform_tensor({1, 2, 3, 3}, -1, 1, rng);
  Tensor out = dmi_forward(f, SketchMask(Tensor::ones({1, 1, 3, 3})), p);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 3; ++x) {
        const float want = p.w_c.value().data()[c] * f.at({0, c, y, x}) + p.b_c.value().data()[c] +
                           p.b_p.value().data()[c];
        EXPECT_NEAR(out.at({0, c, y, x}), want, 1e-6);
      }
}

TEST(Dmi, WorkedExample) {
  DmiParams p = DmiParams::identity(1);
  set_values(p.w_c, {2.0f});
  set_values(p.b_c, {0.5f});
  set_values(p.w_p, {0.5f});
  set_values(p.b_p, {-1.0f});
  Tensor out = dmi_forward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), SketchMask(Tensor({1, 1, 2, 2}, {1, 0, 0, 1})), p);
  const std::vector<float> want{1.5f, 0.5f, 1.0f, 7.5f};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data()[i], want[i], 1e-6);
}

TEST(Dmi, LinearInFeatures) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    DmiParams p = DmiParams::identity(3);
    for (Parameter* q : {&p.w_c, &p.b_c, &p.w_p, &p.b_p}) {
      Tensor v = uniform_tensor(q->shape(), -2, 2, rng);
      std::copy(v.data().begin(), v.data().end(), q->mutable_value().begin());
    }
    Tensor f = uniform_tensor({1, 3, 6, 6}, -1, 1, rng);
    SketchMask m(oracle::random_mask({1, 1, 6, 6}, 0.5, rng));
    const float alpha = std::uniform_real_distribution<float>(-3, 3)(rng);
    Tensor zero = dmi_forward(Tensor::zeros(f.shape()), m, p);
    Tensor lhs = sub(dmi_forward(mul_scalar(f, alpha), m, p), zero);
    Tensor rhs = mul_scalar(sub(dmi_forward(f, m, p), zero), alpha);
    EXPECT_LT(oracle::max_abs_diff(lhs, rhs), 1e-5f);
  }
}

TEST(Dmi, RejectsBadMasks) {
  Tensor f = Tensor::ones({1, 2, 4, 4});
  EXPECT_THROW(dmi_forward(f, SketchMask(Tensor::zeros({1, 1, 2, 2})), DmiParams::identity(2)), ShapeError);
}

TEST(Dmi, TraceExposesBranches) {
  Rng rng(2);
  Tensor f = uniform_tensor({1, 2, 4, 4}, -1, 1, rng);
  DmiParams p = DmiParams::identity(2);
  set_values(p.b_c, {0.3f, -0.2f});
  DmiTrace trace;
  dmi_forward(f, SketchMask(Tensor::zeros({1, 1, 4, 4})), p, &trace);
  // With an empty mask the contour branch is its bias field and nothing else.
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 0; i < 16; ++i) EXPECT_EQ(trace.contour.data()[c * 16 + i], p.b_c.value().data()[c]);
}

// ---------------------------------------------------------------------------

TEST(Adain, UnitMomentsGiveInstanceNorm) {
  Rng rng(3);
  Tensor f = uniform_tensor({2, 3, 5, 5}, -2, 4, rng);
  Tensor out = adain(f, {Tensor::zeros({2, 3, 1, 1}), Tensor::ones({2, 3, 1, 1})});
  Moments m = instance_stats(out);
  for (float v : m.mean.data()) EXPECT_NEAR(v, 0.0f, 1e-4);
  for (float v : m.std.data()) EXPECT_NEAR(v, 1.0f, 1e-4);
}

TEST(Adain, WorkedExample) {
  Tensor out = adain(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), {Tensor::full({1, 1, 1, 1}, 10.0f), Tensor::full({1, 1, 1, 1}, 2.0f)});
  const std::vector<float> want{7.316718f, 9.105573f, 10.894427f, 12.683282f};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data()[i], want[i], 1e-4);
}

TEST(Adain, OwnMomentsAreIdentity) {
  Rng rng(4);
  Tensor f = uniform_tensor({1, 4, 6, 6}, -1, 1, rng);
  EXPECT_LT(oracle::max_abs_diff(adain(f, moments_of(f)), f), 1e-4f);
}

TEST(Adain, MomentContract) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    Tensor f = normal_tensor({2, 3, 8, 8}, 0.5f, 2.0f, rng);
    Tensor mu = uniform_tensor({2, 3, 1, 1}, -3, 3, rng);
    Tensor sigma = uniform_tensor({2, 3, 1, 1}, 0.1f, 3.0f, rng);
    Moments got = instance_stats(adain(f, {mu, sigma}));
    for (int i = 0; i < 6; ++i) {
      EXPECT_NEAR(got.mean.data()[i], mu.data()[i], 1e-3);
      EXPECT_NEAR(got.std.data()[i], sigma.data()[i], 1e-3);
    }
  }
}

TEST(Adain, ChannelMismatchIsRejected) {
  EXPECT_THROW(adain(Tensor::ones({1, 3, 2, 2}), {Tensor::zeros({1, 2, 1, 1}), Tensor::ones({1, 2, 1, 1})}), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(Idn, ContentHasUnitStdForAnyPredictor) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    IdnPredictor pred(4, 8, rng);
    Tensor f = normal_tensor({2, 4, 8, 8}, 1.0f, 3.0f, rng);
    IdnOutput o = idn_forward(f, pred);
    Moments m = instance_stats(o.f_content);
    for (int i = 0; i < 8; ++i) {
      ASSERT_GT(o.sigma_pred.data()[i], 1e-4f);
      EXPECT_NEAR(m.std.data()[i], 1.0f, 1e-3);
    }
  }
}

TEST(Idn, PredictorShapes) {
  Rng rng(5);
  for (int s : {8, 16, 32}) {
    IdnPredictor pred(3, s, rng);
    EXPECT_EQ(pred.forward(Tensor::zeros({2, 3, s, s})).shape(), (Shape{2, 3, 1, 1}));
  }
}

TEST(Idn, TrueMeanGivesInstanceNormalization) {
  Rng rng(6);
  Tensor f = uniform_tensor({2, 3, 6, 6}, -2, 2, rng);
  IdnOutput o = idn_with_mean(f, instance_stats(f).mean);
  EXPECT_LT(oracle::max_abs_diff(o.f_content, instance_norm(f, 0.0f)), 1e-5f);
}

TEST(Idn, RecoversAdainSigma) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor f = uniform_tensor({1, 3, 8, 8}, -1, 1, rng);
    Tensor mu_s = uniform_tensor({1, 3, 1, 1}, -2, 2, rng);
    Tensor sigma_s = uniform_tensor({1, 3, 1, 1}, 0.2f, 2, rng);
    IdnOutput o = idn_with_mean(adain(f, {mu_s, sigma_s}), mu_s);
    Tensor sf = instance_stats(f).std;
    for (int c = 0; c < 3; ++c) {
      const float want = sigma_s.data()[c] * sf.data()[c] / (sf.data()[c] + kNormEps);
      EXPECT_NEAR(o.sigma_pred.data()[c], want, 1e-3);
    }
  }
}

// ---------------------------------------------------------------------------

TEST(Fmt, PoolingChains) {
  FmtConfig cfg;
  EXPECT_EQ(cfg.chain_for(64).sizes, (std::vector<int>{64, 20, 6, 4}));
  EXPECT_EQ(cfg.chain_for(32).sizes, (std::vector<int>{32, 10, 4}));
  EXPECT_EQ(cfg.chain_for(16).sizes, (std::vector<int>{16, 4, 4}));
  EXPECT_EQ(cfg.chain_for(64).max_pools, 2);
  EXPECT_EQ(cfg.chain_for(32).max_pools, 1);
}

TEST(Fmt, ConstantStyleGivesConstant) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const int r = std::array<int, 3>{16, 32, 64}[seed % 3];
    const double density = std::array<double, 5>{0.0, 0.02, 0.2, 0.7, 1.0}[seed % 5];
    SketchMask s(oracle::random_mask({2, 1, r, r}, density, rng));
    SketchMask i(oracle::random_mask({2, 1, r, r}, 0.2, rng));
    const float c = std::uniform_real_distribution<float>(-4.0f, 4.0f)(rng);
    Tensor out = fmt(Tensor::full({2, 3, r, r}, c), s, i, FmtConfig{});
    for (float v : out.data()) ASSERT_EQ(v, c) << "resolution " << r << " density " << density;
  }
}

TEST(Fmt, EmptyInputSketchSelectsPlainBranch) {
  Rng rng(8);
  FmtConfig cfg;
  Tensor f = uniform_tensor({1, 2, 32, 32}, -1, 1, rng);
  SketchMask style(oracle::random_mask({1, 1, 32, 32}, 0.3, rng));
  Tensor out = fmt(f, style, SketchMask(Tensor::zeros({1, 1, 32, 32})), cfg);
  Tensor plain = upsample_nearest(fmt_branches(f, style, cfg).plain, 8);
  EXPECT_EQ(oracle::max_abs_diff(out, plain), 0.0f);
}

TEST(Fmt, EmptyStyleSketchReusesPlainBranch) {
  Rng rng(10);
  Tensor f = uniform_tensor({1, 2, 64, 64}, -1, 1, rng);
  FmtBranches b = fmt_branches(f, SketchMask(Tensor::zeros({1, 1, 64, 64})), FmtConfig{});
  EXPECT_EQ(oracle::max_abs_diff(b.contour, b.plain), 0.0f);
}

TEST(Fmt, PooledCellsStayWithinBranchRange) {
  for (uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(seed);
    const int r = std::array<int, 3>{16, 32, 64}[seed % 3];
    Tensor f = uniform_tensor({1, 1, r, r}, -1, 1, rng);
    Tensor s = oracle::random_mask({1, 1, r, r}, 0.1, rng);
    FmtBranches b = fmt_branches(f, SketchMask(s), FmtConfig{});
    float lo = 1e9f, hi = -1e9f;
    for (int64_t p = 0; p < r * r; ++p) {
      if (s.data()[p] == 1.0f) lo = std::min(lo, f.data()[p]), hi = std::max(hi, f.data()[p]);
    }
    for (float v : b.contour.data()) {
      ASSERT_GE(v, lo - 1e-6f);
      ASSERT_LE(v, hi + 1e-6f);
    }
  }
}

TEST(Fmt, MaskPartitionIsExact) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    FmtConfig cfg;
    const int r = std::array<int, 3>{16, 32, 64}[seed % 3];
    Tensor f = uniform_tensor({1, 3, r, r}, -1, 1, rng);
    SketchMask style(oracle::random_mask({1, 1, r, r}, 0.3, rng));
    SketchMask input(oracle::random_mask({1, 1, r, r}, 0.3, rng));
    Tensor out = fmt(f, style, input, cfg);
    FmtBranches b = fmt_branches(f, style, cfg);
    Tensor contour = upsample_nearest(b.contour, r / 4);
    Tensor plain = upsample_nearest(b.plain, r / 4);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < r; ++y)
        for (int64_t x = 0; x < r; ++x) {
          const Tensor& branch = input.tensor().at({0, 0, y, x}) == 1.0f ? contour : plain;
          ASSERT_EQ(out.at({0, c, y, x}), branch.at({0, c, y, x}));
        }
  }
}

TEST(Fmt, MatchesLiteralFiveSteps) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const int r = std::array<int, 3>{16, 32, 64}[seed % 3];
    Tensor f = uniform_tensor({1, 2, r, r}, -1, 1, rng);
    const double density = std::array<double, 4>{0.02, 0.25, 0.6, 0.97}[seed % 4];
    Tensor s = oracle::random_mask({1, 1, r, r}, density, rng);
    Tensor i = oracle::random_mask({1, 1, r, r}, 0.25, rng);
    Tensor got = fmt(f, SketchMask(s), SketchMask(i), FmtConfig{});
    EXPECT_LT(oracle::max_abs_diff(got, oracle::fmt_literal(f, s, i)), 1e-6f) << "resolution " << r;
  }
}

TEST(Fmt, StyleValuesMatterOnlyThroughTheirBranch) {
  Rng rng(9);
  FmtConfig cfg;
  Tensor f = uniform_tensor({1, 2, 16, 16}, -1, 1, rng);
  Tensor s = oracle::random_mask({1, 1, 16, 16}, 0.3, rng);
  SketchMask input(oracle::random_mask({1, 1, 16, 16}, 0.3, rng));
  // Rewrite every style value on contour pixels; plain-branch pixels of the
  // output must not move.
  std::vector<float> g(f.data().begin(), f.data().end());
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t p = 0; p < 256; ++p)
      if (s.data()[p] == 1.0f) g[c * 256 + p] = std::uniform_real_distribution<float>(-5, 5)(rng);
  Tensor a = fmt(f, SketchMask(s), input, cfg);
  Tensor b = fmt(Tensor(f.shape(), g), SketchMask(s), input, cfg);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t p = 0; p < 256; ++p)
      if (input.tensor().data()[p] == 0.0f) ASSERT_EQ(a.data()[c * 256 + p], b.data()[c * 256 + p]);
}

TEST(Fmt, JointTransposeCommutes) {
  // Pooling windows are symmetric in the two axes, so shuffling the style
  // features together with both sketches by a transpose transposes f_t.
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int r = std::array<int, 3>{16, 32, 64}[seed % 3];
    Tensor f = uniform_tensor({1, 2, r, r}, -1, 1, rng);
    Tensor s = oracle::random_mask({1, 1, r, r}, 0.3, rng);
    Tensor i = oracle::random_mask({1, 1, r, r}, 0.3, rng);
    Tensor a = transpose_hw(fmt(f, SketchMask(s), SketchMask(i), FmtConfig{}));
    Tensor b = fmt(transpose_hw(f), SketchMask(transpose_hw(s)), SketchMask(transpose_hw(i)), FmtConfig{});
    EXPECT_EQ(oracle::max_abs_diff(a, b), 0.0f);
  }
}

TEST(Fmt, UnconfiguredResolutionIsRejected) {
  FmtConfig cfg;
  cfg.resolutions = {16, 32};
  SketchMask m(Tensor::zeros({1, 1, 64, 64}));
  EXPECT_THROW(fmt(Tensor::zeros({1, 1, 64, 64}), m, m, cfg), ContractError);
  SketchMask m8(Tensor::zeros({1, 1, 8, 8}));
  EXPECT_THROW(fmt(Tensor::zeros({1, 1, 8, 8}), m8, m8, FmtConfig{}), ContractError);
}

// ---------------------------------------------------------------------------

TEST(AttnResBlock, ClosedGateIsIdentity) {
  Rng rng(10);
  AttnResBlock block(4, 6, rng);
  std::fill(block.gate.bias.mutable_value().begin(), block.gate.bias.mutable_value().end(), -30.0f);
  Tensor f = uniform_tensor({2, 4, 5, 5}, -1, 1, rng);
  Tensor v = uniform_tensor({2, 6}, -1, 1, rng);
  EXPECT_LT(oracle::max_abs_diff(block.forward(f, v), f), 1e-4f);
}

TEST(AttnResBlock, OpenGateIsPlainResidual) {
  Rng rng(11);
  AttnResBlock block(4, 6, rng);
  std::fill(block.gate.bias.mutable_value().begin(), block.gate.bias.mutable_value().end(), 30.0f);
  Tensor f = uniform_tensor({2, 4, 5, 5}, -1, 1, rng);
  Tensor v = uniform_tensor({2, 6}, -1, 1, rng);
  Tensor plain = add(f, block.conv2.forward(leaky_relu(instance_norm(block.conv1.forward(f), kNormEps), 0.2f)));
  EXPECT_LT(oracle::max_abs_diff(block.forward(f, v), plain), 1e-4f);
}

TEST(AttnResBlock, OutputMinusInputIsGatedResidual) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    AttnResBlock block(3, 5, rng);
    Tensor f = uniform_tensor({2, 3, 6, 6}, -1, 1, rng);
    auto parts = block.forward_parts(f, uniform_tensor({2, 5}, -1, 1, rng));
    EXPECT_LT(oracle::max_abs_diff(sub(parts.out, f), mul(parts.gate, parts.residual)), 1e-6f);
  }
}

TEST(AttnResBlock, ChannelMismatchIsRejected) {
  Rng rng(12);
  AttnResBlock block(3, 5, rng);
  EXPECT_THROW(block.forward(Tensor::zeros({1, 4, 4, 4}), Tensor::zeros({1, 5})), ShapeError);
}
