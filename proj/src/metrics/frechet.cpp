#include <Eigen/Dense>

#include "synthfed/error.hpp"
#include "synthfed/metrics.hpp"

namespace synthfed {
namespace {

constexpr double kSingularEigen = 1e-10;
constexpr double kRegularization = 1e-6;

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Gaussian fit(const EmbeddingSet& set) {
  const auto n = static_cast<Eigen::Index>(set.size());
  const auto d = static_cast<Eigen::Index>(set.dimension());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = set.row(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = row[static_cast<std::size_t>(j)];
  }
  Gaussian g;
  g.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  return g;
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dimension() != b.dimension())
    throw DataError("frechet: dimension mismatch " + std::to_string(a.dimension()) + " vs " +
                    std::to_string(b.dimension()));
  if (a.size() < 2 || b.size() < 2) throw DataError("frechet: need at least 2 samples per set");
  Gaussian ga = fit(a);
  Gaussian gb = fit(b);
  if (min_eigenvalue(ga.cov) < kSingularEigen || min_eigenvalue(gb.cov) < kSingularEigen) {
    ga.cov.diagonal().array() += kRegularization;
    gb.cov.diagonal().array() += kRegularization;
  }
  // Tr((S_a S_b)^{1/2}) = Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}), the inner matrix being symmetric PSD.
  const Eigen::MatrixXd root_a = psd_sqrt(ga.cov);
  Eigen::MatrixXd inner = root_a * gb.cov * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double trace_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (ga.mean - gb.mean).squaredNorm();
  const double value = mean_term + ga.cov.trace() + gb.cov.trace() - 2.0 * trace_sqrt;
  return std::max(0.0, value);
}

}  // namespace synthfed
