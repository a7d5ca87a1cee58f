#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "stylesketch/error.hpp"
#include "stylesketch/losses.hpp"
#include "stylesketch/metrics.hpp"
#include "stylesketch/ops.hpp"

using namespace stylesketch;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

DiscriminatorOutput d_out(int n, float logit, const Tensor& style, const Tensor& sketch) {
  return {style, sketch, Tensor::full({n, 1}, logit)};
}

Tensor binary(const Shape& s, double p, Rng& rng) { return oracle::random_mask(s, p, rng); }

}  // namespace

// ---------------------------------------------------------------------------

TEST(DLoss, ChanceLogitsGiveTwoLnTwo) {
  Rng rng(1);
  Tensor style = uniform_tensor({4, 8}, -1, 1, rng);
  Tensor sketch = binary({4, 1, 8, 8}, 0.3, rng);
  DLossTerms t = d_loss_terms(d_out(4, 0, style, sketch), d_out(4, 0, style, sketch), style, sketch);
  EXPECT_NEAR(t.total.item(), 2.0 * kLn2, 1e-6);
  EXPECT_EQ(t.style.item(), 0.0f);
  EXPECT_EQ(t.content.item(), 0.0f);
}

TEST(DLoss, PerfectDiscriminatorIsNearZero) {
  Rng rng(2);
  Tensor style = uniform_tensor({3, 8}, -1, 1, rng);
  Tensor sketch = binary({3, 1, 8, 8}, 0.3, rng);
  Tensor total = d_loss(d_out(3, 80, style, sketch), d_out(3, -80, style, sketch), style, sketch);
  EXPECT_LT(total.item(), 1e-3f);
  EXPECT_GE(total.item(), 0.0f);
}

TEST(DLoss, ConstantStyleOffsetGivesSquaredOffset) {
  Rng rng(3);
  Tensor target = uniform_tensor({2, 16}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 8, 8}, 0.3, rng);
  DLossTerms t = d_loss_terms(d_out(2, 0, add_scalar(target, 0.1f), sketch), d_out(2, 0, target, sketch), target,
                              sketch);
  EXPECT_NEAR(t.style.item(), 0.01, 1e-6);
}

TEST(DLoss, StyleAndContentUseRealOutputsOnly) {
  Rng rng(4);
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 8, 8}, 0.3, rng);
  Tensor junk_style = uniform_tensor({2, 8}, -5, 5, rng);
  Tensor junk_sketch = uniform_tensor({2, 1, 8, 8}, 0, 1, rng);
  DLossTerms t = d_loss_terms(d_out(2, 0, style, sketch), d_out(2, 0, junk_style, junk_sketch), style, sketch);
  EXPECT_EQ(t.style.item(), 0.0f);
  EXPECT_EQ(t.content.item(), 0.0f);
}

TEST(DLoss, ShapeMismatchIsRejected) {
  Rng rng(5);
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 8, 8}, 0.3, rng);
  EXPECT_THROW(d_loss(d_out(2, 0, style, sketch), d_out(2, 0, style, sketch), uniform_tensor({2, 7}, 0, 1, rng),
                      sketch),
               ShapeError);
  EXPECT_THROW(d_loss(d_out(2, 0, style, sketch), d_out(2, 0, style, sketch), style, binary({2, 1, 4, 8}, 0.3, rng)),
               ShapeError);
}

// ---------------------------------------------------------------------------

TEST(GLoss, AdversarialOnlyAtChanceIsLnTwo) {
  Rng rng(6);
  LossWeights w{1, 0, 0, 0, 0};
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 16, 16}, 0.3, rng);
  Tensor img = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  Tensor other = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  EXPECT_NEAR(g_loss(d_out(2, 0, style, sketch), style, sketch, img, other, true, w).item(), kLn2, 1e-6);
}

TEST(GLoss, IdenticalPairedImagesZeroReconAndGradient) {
  Rng rng(7);
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 16, 16}, 0.3, rng);
  Tensor img = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  GLossTerms t = g_loss_terms(d_out(2, 80, style, sketch), style, sketch, img, img, true, LossWeights{});
  EXPECT_EQ(t.recon.item(), 0.0f);
  EXPECT_EQ(t.grad.item(), 0.0f);
  EXPECT_LT(t.total.item(), 1e-3f);
}

TEST(GLoss, UnpairedHasNoReconstructionTerm) {
  Rng rng(8);
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 16, 16}, 0.3, rng);
  Tensor img = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  Tensor other = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  LossWeights small;
  LossWeights huge;
  huge.recon = 1e6f;
  GLossTerms a = g_loss_terms(d_out(2, 0.3f, style, sketch), style, sketch, img, other, false, small);
  GLossTerms b = g_loss_terms(d_out(2, 0.3f, style, sketch), style, sketch, img, other, false, huge);
  EXPECT_FALSE(a.recon.defined());
  EXPECT_EQ(a.total.item(), b.total.item());
  GLossTerms p = g_loss_terms(d_out(2, 0.3f, style, sketch), style, sketch, img, other, true, small);
  EXPECT_NEAR(p.total.item() - a.total.item(), small.recon * p.recon.item(), 1e-4);
}

TEST(GLoss, PairedShapeMismatchIsRejected) {
  Rng rng(9);
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 16, 16}, 0.3, rng);
  EXPECT_THROW(g_loss(d_out(2, 0, style, sketch), style, sketch, uniform_tensor({2, 3, 16, 16}, -1, 1, rng),
                      uniform_tensor({2, 3, 32, 32}, -1, 1, rng), true, LossWeights{}),
               ShapeError);
}

TEST(LossWeights, ValidationRejectsBadWeights) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  EXPECT_NO_THROW((LossWeights{0, 0, 0, 1, 0}.validate()));
  EXPECT_THROW((LossWeights{0, 0, 0, 0, 0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1, -1, 1, 1, 1}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1, 1, std::nanf(""), 1, 1}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1, 1, 1, INFINITY, 1}.validate()), ConfigError);
}

TEST(Losses, NonnegativeOnRandomInputs) {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    Tensor s1 = uniform_tensor({2, 8}, -1, 1, rng), s2 = uniform_tensor({2, 8}, -1, 1, rng);
    Tensor k1 = uniform_tensor({2, 1, 16, 16}, 0, 1, rng), k2 = binary({2, 1, 16, 16}, 0.3, rng);
    Tensor i1 = uniform_tensor({2, 3, 16, 16}, -1, 1, rng), i2 = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
    const float l1 = std::uniform_real_distribution<float>(-10, 10)(rng);
    const float l2 = std::uniform_real_distribution<float>(-10, 10)(rng);
    EXPECT_GE(d_loss(d_out(2, l1, s1, k1), d_out(2, l2, s2, k1), s2, k2).item(), 0.0f);
    GLossTerms g = g_loss_terms(d_out(2, l1, s1, k1), s2, k2, i1, i2, seed % 2 == 0, LossWeights{});
    EXPECT_GE(g.total.item(), 0.0f);
    EXPECT_GE(g.grad.item(), 0.0f);
  }
}

// ---------------------------------------------------------------------------

TEST(GradientMatch, MatchesPatchLoopOracle) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int64_t n = 1 + static_cast<int64_t>(seed % 2), c = 1 + static_cast<int64_t>(seed % 3);
    const int64_t h = seed % 4 == 0 ? 32 : 16;
    Tensor a = uniform_tensor({n, c, h, 16}, -1, 1, rng);
    Tensor b = uniform_tensor({n, c, h, 16}, -1, 1, rng);
    EXPECT_NEAR(gradient_match(a, b).item(), oracle::gradient_match(a, b, kGradientEps), 1e-5);
  }
}

TEST(GradientMatch, ZeroAtMinimaAndForConstants) {
  Rng rng(30);
  Tensor a = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  EXPECT_EQ(gradient_match(a, a).item(), 0.0f);
  EXPECT_EQ(gradient_match(Tensor::full({1, 2, 16, 16}, 0.3f), Tensor::full({1, 2, 16, 16}, -4.0f)).item(), 0.0f);
}

TEST(GradientMatch, ConstantPairHasVanishingGradient) {
  Tensor a(Shape{1, 1, 16, 16}, std::vector<float>(256, 0.7f), true);
  Tensor loss = gradient_match(a, Tensor::full({1, 1, 16, 16}, -2.0f));
  loss.backward();
  for (float g : a.grad()) ASSERT_EQ(g, 0.0f);
}

TEST(GradientMatch, InvariantToGlobalShift) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor a = uniform_tensor({1, 2, 16, 16}, -1, 1, rng);
    Tensor b = uniform_tensor({1, 2, 16, 16}, -1, 1, rng);
    const float k = std::uniform_real_distribution<float>(-3, 3)(rng);
    EXPECT_NEAR(gradient_match(add_scalar(a, k), add_scalar(b, k)).item(), gradient_match(a, b).item(), 1e-5);
  }
}

TEST(GradientMatch, IndivisibleSizeIsAContractViolation) {
  EXPECT_THROW(gradient_match(Tensor::zeros({1, 1, 12, 16}), Tensor::zeros({1, 1, 12, 16})), ContractError);
  EXPECT_THROW(gradient_match(Tensor::zeros({1, 1, 16, 16}), Tensor::zeros({1, 1, 16, 8})), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(GradientMatch, ActivationTermSkipsNarrowTaps) {
  Rng rng(21);
  const std::vector<Tensor> a{uniform_tensor({1, 2, 32, 32}, -1, 1, rng), uniform_tensor({1, 3, 16, 16}, -1, 1, rng),
                              uniform_tensor({1, 4, 8, 8}, -1, 1, rng)};
  const std::vector<Tensor> b{uniform_tensor({1, 2, 32, 32}, -1, 1, rng), uniform_tensor({1, 3, 16, 16}, -1, 1, rng),
                              uniform_tensor({1, 4, 8, 8}, -1, 1, rng)};
  const float want = 0.5f * (gradient_match(a[0], b[0]).item() + gradient_match(a[1], b[1]).item());
  EXPECT_NEAR(activation_gradient_match(a, b).item(), want, 1e-6f);
  EXPECT_EQ(activation_gradient_match(a, a).item(), 0.0f);
  EXPECT_FALSE(activation_gradient_match({a[2]}, {b[2]}).defined());
  EXPECT_THROW(activation_gradient_match(a, {b[0]}), ShapeError);
}

TEST(Gram, MatchesMatrixProductOracle) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor a = uniform_tensor({1, 5, 6, 7}, -1, 1, rng);
    Tensor b = uniform_tensor({1, 5, 6, 7}, -1, 1, rng);
    EXPECT_NEAR(gram_l2(a, b), oracle::gram_l2(a, b), 1e-5);
  }
}

TEST(Gram, MatrixIsSymmetricAndNormalized) {
  Tensor ones = Tensor::ones({1, 3, 4, 4});
  const std::vector<double> g = gram_matrix(ones);
  ASSERT_EQ(g.size(), 9u);
  for (double v : g) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Gram, SignInvariantButPermutationSensitive) {
  Rng rng(11);
  Tensor a = uniform_tensor({1, 4, 8, 8}, 0, 1, rng);
  EXPECT_EQ(gram_l2(a, a), 0.0);
  EXPECT_NEAR(gram_l2(a, mul_scalar(a, -1.0f)), 0.0, 1e-9);
  // Scale channel 0 so the permuted Gram genuinely differs.
  std::vector<float> v = oracle::values(a);
  for (int i = 0; i < 64; ++i) v[i] *= 3.0f;
  Tensor b({1, 4, 8, 8}, v);
  std::vector<float> p(v.size());
  const int perm[4] = {1, 2, 3, 0};
  for (int c = 0; c < 4; ++c) std::copy_n(v.begin() + perm[c] * 64, 64, p.begin() + c * 64);
  EXPECT_GT(gram_l2(b, Tensor({1, 4, 8, 8}, p)), 1.0);
}

TEST(Gram, ShapeMismatchIsRejected) {
  EXPECT_THROW(gram_l2(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({1, 2, 4, 4})), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(EdgeMetrics, IdentitiesAndComplements) {
  Rng rng(12);
  SketchMask a(binary({1, 1, 16, 16}, 0.3, rng));
  SketchMask ones(Tensor::ones({1, 1, 16, 16}));
  SketchMask zeros(Tensor::zeros({1, 1, 16, 16}));
  EXPECT_EQ(pdar(a, a), 0.0);
  EXPECT_EQ(edge_l1(a, a), 0.0);
  SketchMask not_a(rsub_scalar(a.tensor(), 1.0f));
  EXPECT_EQ(pdar(a, not_a), 1.0);
  EXPECT_EQ(edge_l1(ones, zeros), 1000.0);
}

TEST(EdgeMetrics, L1IsThousandTimesPdarAndPdarIsAMetric) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    SketchMask a(binary({1, 1, 16, 16}, 0.3, rng));
    SketchMask b(binary({1, 1, 16, 16}, 0.5, rng));
    SketchMask c(binary({1, 1, 16, 16}, 0.1, rng));
    EXPECT_NEAR(edge_l1(a, b), 1000.0 * pdar(a, b), 1e-9);
    EXPECT_EQ(pdar(a, b), pdar(b, a));
    EXPECT_LE(pdar(a, c), pdar(a, b) + pdar(b, c) + 1e-12);
  }
}

TEST(EdgeMetrics, ResolutionMismatchIsRejected) {
  EXPECT_THROW(pdar(SketchMask(Tensor::zeros({1, 1, 8, 8})), SketchMask(Tensor::zeros({1, 1, 16, 16}))), ShapeError);
  EXPECT_THROW(edge_l1(SketchMask(Tensor::zeros({1, 1, 8, 8})), SketchMask(Tensor::zeros({1, 1, 8, 4}))),
               ShapeError);
}

// ---------------------------------------------------------------------------

namespace {

GaussianStats diag_stats(std::vector<double> mean, std::vector<double> var) {
  GaussianStats g;
  const size_t s = mean.size();
  g.mean = std::move(mean);
  g.cov.assign(s * s, 0.0);
  for (size_t i = 0; i < s; ++i) g.cov[i * s + i] = var[i];
  return g;
}

GaussianStats random_stats(int s, Rng& rng) {
  Tensor rows = uniform_tensor({static_cast<int64_t>(3 * s), s}, -1, 1, rng);
  return gaussian_stats(rows);
}

}  // namespace

TEST(Frechet, OneDimensionalClosedForm) {
  EXPECT_NEAR(frechet_distance(diag_stats({0}, {1}), diag_stats({1}, {4})), 2.0, 1e-9);
}

TEST(Frechet, DiagonalMatchesCoordinatewiseFormula) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> mu(-2, 2), var(0.01, 3);
    const int s = 1 + static_cast<int>(seed % 6);
    std::vector<double> ma(s), mb(s), va(s), vb(s);
    double expected = 0.0;
    for (int i = 0; i < s; ++i) {
      ma[i] = mu(rng), mb[i] = mu(rng), va[i] = var(rng), vb[i] = var(rng);
      expected += (ma[i] - mb[i]) * (ma[i] - mb[i]) + std::pow(std::sqrt(va[i]) - std::sqrt(vb[i]), 2);
    }
    EXPECT_NEAR(frechet_distance(diag_stats(ma, va), diag_stats(mb, vb)), expected, 1e-6);
  }
}

TEST(Frechet, ZeroOnIdenticalAndSymmetric) {
  for (uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(seed);
    GaussianStats a = random_stats(8, rng);
    GaussianStats b = random_stats(8, rng);
    EXPECT_LT(std::abs(frechet_distance(a, a)), 1e-6);
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-6);
    EXPECT_GT(frechet_distance(a, b), 1e-6);
  }
}

TEST(Frechet, RankDeficientCovarianceIsClamped) {
  // Two identical columns make the covariance singular.
  Rng rng(13);
  std::vector<float> v;
  for (int i = 0; i < 10; ++i) {
    const float x = std::uniform_real_distribution<float>(-1, 1)(rng);
    v.insert(v.end(), {x, x, 0.5f});
  }
  GaussianStats a = gaussian_stats(Tensor({10, 3}, v));
  const double d = frechet_distance(a, a);
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_LT(std::abs(d), 1e-6);
}

TEST(Frechet, GaussianStatsArePopulationMoments) {
  GaussianStats g = gaussian_stats(Tensor({4, 1}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(g.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(g.cov[0], 1.25);
}

TEST(Frechet, DimensionMismatchIsRejected) {
  EXPECT_THROW(frechet_distance(diag_stats({0}, {1}), diag_stats({0, 0}, {1, 1})), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(ClassificationScore, CountsMatches) {
  EXPECT_DOUBLE_EQ(classification_score({0, 1, 2, 1}, {0, 1, 1, 1}), 0.75);
  EXPECT_THROW(classification_score({0, 1}, {0}), ContractError);
  EXPECT_THROW(classification_score({}, {}), ContractError);
}

TEST(ClassificationScore, UniformRandomPredictorIsNearChance) {
  Rng rng(14);
  const int k = 4, n = 20000;
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::vector<int> pred(n), labels(n);
  for (int i = 0; i < n; ++i) pred[i] = pick(rng), labels[i] = pick(rng);
  EXPECT_NEAR(classification_score(pred, labels), 1.0 / k, 0.02);
}

TEST(Losses, RealnessOnlyDiscriminatorDropsHeadTerms) {
  Rng rng(15);
  Tensor style = uniform_tensor({2, 8}, -1, 1, rng);
  Tensor sketch = binary({2, 1, 16, 16}, 0.3, rng);
  DiscriminatorOutput bare{Tensor(), Tensor(), Tensor::zeros({2, 1})};
  DLossTerms d = d_loss_terms(bare, bare, style, sketch);
  EXPECT_FALSE(d.style.defined());
  EXPECT_NEAR(d.total.item(), 2.0 * kLn2, 1e-6);
  Tensor img = uniform_tensor({2, 3, 16, 16}, -1, 1, rng);
  GLossTerms g = g_loss_terms(bare, style, sketch, img, img, true, LossWeights{});
  EXPECT_FALSE(g.content.defined());
  EXPECT_NEAR(g.total.item(), kLn2, 1e-6);
}
