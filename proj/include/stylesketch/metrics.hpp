#pragma once

#include <string>
#include <vector>

#include "stylesketch/layers.hpp"
#include "stylesketch/tensor.hpp"

namespace stylesketch {

// Normalized Gram matrix F F^T / (C H W) of a [1, C, H, W] map, row-major C x C.
std::vector<double> gram_matrix(const Tensor& f);

// Frobenius distance between normalized Gram matrices, times 1000.
double gram_l2(const Tensor& f_a, const Tensor& f_b);

// Fraction of differing pixels.
double pdar(const SketchMask& a, const SketchMask& b);

// Mean absolute difference times 1000.
double edge_l1(const SketchMask& a, const SketchMask& b);

struct GaussianStats {
  std::vector<double> mean;  // [S]
  std::vector<double> cov;   // [S x S] row-major, symmetric
  int64_t dim() const { return static_cast<int64_t>(mean.size()); }
};

// Sample mean and (population) covariance of the rows of a [M, S] tensor.
GaussianStats gaussian_stats(const Tensor& rows);

// |mu_a - mu_b|^2 + Tr(A + B - 2 (A B)^(1/2)) in double precision. The trace
// of the root is taken as Tr sqrt(A^(1/2) B A^(1/2)) with eigenvalues clamped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Fraction of predictions equal to their labels.
double classification_score(const std::vector<int>& predicted, const std::vector<int>& labels);

}  // namespace stylesketch
