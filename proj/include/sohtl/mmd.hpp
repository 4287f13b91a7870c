#pragma once

// Gaussian-kernel maximum mean discrepancy between two latent batches.
// Rows are samples.

#include <Eigen/Dense>

namespace sohtl::adapt {

using LatentBatch = Eigen::MatrixXd;

enum class BandwidthSelection { fixed, median_heuristic };

struct KernelConfig {
  double sigma = 1.0;
  BandwidthSelection selection = BandwidthSelection::median_heuristic;

  bool operator==(const KernelConfig&) const = default;
};

/// Biased (V-statistic) squared MMD with k(a, b) = exp(-|a - b|^2 / (2 sigma^2)).
/// Self-similarity terms are included, so the result is >= 0 up to rounding.
double mmd2(const LatentBatch& zs, const LatentBatch& zt, double sigma);

struct Mmd2Gradient {
  double value = 0.0;
  LatentBatch d_source; // d mmd2 / d zs
  LatentBatch d_target; // d mmd2 / d zt
};

Mmd2Gradient mmd2_with_gradient(const LatentBatch& zs, const LatentBatch& zt, double sigma);

/// sigma with sigma^2 = median(squared pairwise distances of the pooled set) / 2.
/// Throws DataError when every pooled point coincides.
double median_bandwidth(const LatentBatch& zs, const LatentBatch& zt);

}  // namespace sohtl::adapt
