#include "stylesketch/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "stylesketch/error.hpp"

namespace stylesketch {

namespace {

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_mask(const SketchMask& a, const SketchMask& b) {
  if (a.tensor().shape() != b.tensor().shape()) {
    throw ShapeError("edge maps differ in shape: " + shape_str(a.tensor().shape()) + " vs " +
                     shape_str(b.tensor().shape()));
  }
}

Eigen::SelfAdjointEigenSolver<MatrixD> eigen_of(const MatrixD& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<MatrixD> solver(m);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "eigendecomposition of " << what << " did not converge (" << m.rows() << "x" << m.cols()
       << ", max |entry| " << m.cwiseAbs().maxCoeff() << ", finite " << (m.allFinite() ? "yes" : "no") << ")";
    throw NumericError(os.str());
  }
  return solver;
}

}  // namespace

std::vector<double> gram_matrix(const Tensor& f) {
  if (f.dim() != 4 || f.size(0) != 1) throw ShapeError("gram_matrix expects [1,C,H,W], got " + shape_str(f.shape()));
  const int64_t c = f.size(1);
  const int64_t hw = f.size(2) * f.size(3);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> fm(f.data().data(), c, hw);
  const MatrixD fd = fm.cast<double>();
  const MatrixD g = fd * fd.transpose() / static_cast<double>(c * hw);
  return {g.data(), g.data() + g.size()};
}

double gram_l2(const Tensor& f_a, const Tensor& f_b) {
  if (f_a.shape() != f_b.shape()) {
    throw ShapeError("gram_l2: " + shape_str(f_a.shape()) + " vs " + shape_str(f_b.shape()));
  }
  const auto ga = gram_matrix(f_a);
  const auto gb = gram_matrix(f_b);
  double acc = 0.0;
  for (size_t i = 0; i < ga.size(); ++i) acc += (ga[i] - gb[i]) * (ga[i] - gb[i]);
  return 1000.0 * std::sqrt(acc);
}

double pdar(const SketchMask& a, const SketchMask& b) {
  require_same_mask(a, b);
  const auto av = a.tensor().data();
  const auto bv = b.tensor().data();
  int64_t differ = 0;
  for (size_t i = 0; i < av.size(); ++i) differ += av[i] != bv[i];
  return static_cast<double>(differ) / static_cast<double>(av.size());
}

double edge_l1(const SketchMask& a, const SketchMask& b) {
  require_same_mask(a, b);
  const auto av = a.tensor().data();
  const auto bv = b.tensor().data();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += std::abs(static_cast<double>(av[i]) - bv[i]);
  return 1000.0 * acc / static_cast<double>(av.size());
}

GaussianStats gaussian_stats(const Tensor& rows) {
  if (rows.dim() != 2) throw ShapeError("gaussian_stats expects [M,S], got " + shape_str(rows.shape()));
  const int64_t m = rows.size(0);
  const int64_t s = rows.size(1);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(rows.data().data(), m, s);
  const MatrixD xd = x.cast<double>();
  const Eigen::RowVectorXd mu = xd.colwise().mean();
  const MatrixD centered = xd.rowwise() - mu;
  const MatrixD cov = centered.transpose() * centered / static_cast<double>(m);
  GaussianStats g;
  g.mean.assign(mu.data(), mu.data() + s);
  g.cov.assign(cov.data(), cov.data() + cov.size());
  return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim() || static_cast<int64_t>(a.cov.size()) != a.dim() * a.dim() ||
      static_cast<int64_t>(b.cov.size()) != b.dim() * b.dim()) {
    throw ShapeError("frechet_distance: incompatible Gaussian statistics");
  }
  const int64_t s = a.dim();
  Eigen::Map<const Eigen::VectorXd> mu_a(a.mean.data(), s);
  Eigen::Map<const Eigen::VectorXd> mu_b(b.mean.data(), s);
  MatrixD ca = Eigen::Map<const MatrixD>(a.cov.data(), s, s);
  MatrixD cb = Eigen::Map<const MatrixD>(b.cov.data(), s, s);
  ca = 0.5 * (ca + ca.transpose());
  cb = 0.5 * (cb + cb.transpose());

  const auto ea = eigen_of(ca, "first covariance");
  const Eigen::VectorXd root_vals = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatrixD root_a = ea.eigenvectors() * root_vals.asDiagonal() * ea.eigenvectors().transpose();
  MatrixD inner = root_a * cb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  const auto ei = eigen_of(inner, "covariance product");
  const double tr_root = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double d = (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_root;
  return std::max(d, 0.0);
}

double classification_score(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) {
    throw ContractError("classification_score needs equally sized, nonempty prediction and label lists");
  }
  int64_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace stylesketch
