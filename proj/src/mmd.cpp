#include "sohtl/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sohtl/error.hpp"

namespace sohtl::adapt {

namespace {

void check_inputs(const LatentBatch& zs, const LatentBatch& zt, double sigma) {
  if (zs.rows() == 0 || zt.rows() == 0) throw ContractError("mmd2: empty latent batch");
  if (zs.cols() != zt.cols()) throw ContractError("mmd2: latent dimension mismatch");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ContractError("mmd2: sigma must be positive");
}

// Pairwise squared distances between rows of a and rows of b.
Eigen::MatrixXd squared_distances(const LatentBatch& a, const LatentBatch& b) {
  Eigen::MatrixXd d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return d;
}

Eigen::MatrixXd gaussian(const Eigen::MatrixXd& sq, double sigma) {
  return (-sq.array() / (2.0 * sigma * sigma)).exp().matrix();
}

}  // namespace

double mmd2(const LatentBatch& zs, const LatentBatch& zt, double sigma) {
  check_inputs(zs, zt, sigma);
  const double ns = static_cast<double>(zs.rows());
  const double nt = static_cast<double>(zt.rows());
  const double kss = gaussian(squared_distances(zs, zs), sigma).sum();
  const double ktt = gaussian(squared_distances(zt, zt), sigma).sum();
  const double kst = gaussian(squared_distances(zs, zt), sigma).sum();
  return kss / (ns * ns) + ktt / (nt * nt) - 2.0 * kst / (ns * nt);
}

Mmd2Gradient mmd2_with_gradient(const LatentBatch& zs, const LatentBatch& zt, double sigma) {
  check_inputs(zs, zt, sigma);
  const double ns = static_cast<double>(zs.rows());
  const double nt = static_cast<double>(zt.rows());
  const double s2 = sigma * sigma;
  const Eigen::MatrixXd kss = gaussian(squared_distances(zs, zs), sigma);
  const Eigen::MatrixXd ktt = gaussian(squared_distances(zt, zt), sigma);
  const Eigen::MatrixXd kst = gaussian(squared_distances(zs, zt), sigma);

  Mmd2Gradient out;
  out.value = kss.sum() / (ns * ns) + ktt.sum() / (nt * nt) - 2.0 * kst.sum() / (ns * nt);

  // d k(a, b) / d a = -k(a, b) (a - b) / sigma^2. Each within-set pair appears
  // twice in the double sum, hence the factor 2.
  auto self_term = [s2](const Eigen::MatrixXd& k, const LatentBatch& z, double n) {
    const Eigen::VectorXd row_sums = k.rowwise().sum();
    LatentBatch g = (k * z - row_sums.asDiagonal() * z) * (2.0 / (n * n * s2));
    return g;
  };
  out.d_source = self_term(kss, zs, ns);
  out.d_target = self_term(ktt, zt, nt);

  const double c = 2.0 / (ns * nt * s2);
  const Eigen::VectorXd kst_rows = kst.rowwise().sum();
  const Eigen::VectorXd kst_cols = kst.colwise().sum().transpose();
  out.d_source += c * (kst_rows.asDiagonal() * zs - kst * zt);
  out.d_target += c * (kst_cols.asDiagonal() * zt - kst.transpose() * zs);
  return out;
}

double median_bandwidth(const LatentBatch& zs, const LatentBatch& zt) {
  if (zs.cols() != zt.cols()) throw ContractError("median_bandwidth: latent dimension mismatch");
  LatentBatch pooled(zs.rows() + zt.rows(), zs.cols());
  pooled << zs, zt;
  const Eigen::Index n = pooled.rows();
  if (n < 2) throw DataError("median_bandwidth: need at least 2 points");

  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((pooled.row(i) - pooled.row(j)).squaredNorm());

  const std::size_t m = d.size();
  std::nth_element(d.begin(), d.begin() + m / 2, d.end());
  double median = d[m / 2];
  if (m % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + m / 2);
    median = 0.5 * (median + lower);
  }
  if (!(median > 0.0))
    throw DataError("median_bandwidth: degenerate bandwidth (median pairwise distance is zero)");
  return std::sqrt(median / 2.0);
}

}  // namespace sohtl::adapt
