#pragma once

#include <cmath>
#include <span>

#include "sohtl/error.hpp"

namespace sohtl {

/// Root mean squared error in percent SOH (inputs are SOH fractions).
inline double metric_rmse(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size() || preds.empty())
    throw ContractError("metric_rmse: inputs must be non-empty and of equal length");
  double sse = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sse += (preds[i] - truths[i]) * (preds[i] - truths[i]);
  return 100.0 * std::sqrt(sse / static_cast<double>(preds.size()));
}

/// 1 - SS_res / SS_tot. Undefined (throws DataError) for constant truths.
inline double metric_r2(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size() || preds.empty())
    throw ContractError("metric_r2: inputs must be non-empty and of equal length");
  double mean = 0.0;
  for (double t : truths) mean += t;
  mean /= static_cast<double>(truths.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ss_res += (truths[i] - preds[i]) * (truths[i] - preds[i]);
    ss_tot += (truths[i] - mean) * (truths[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw DataError("metric_r2: undefined for constant truths");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace sohtl
