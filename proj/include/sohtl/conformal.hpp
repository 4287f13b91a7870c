#pragma once

// Split conformal prediction for one-step SOH forecasts and the closed-loop
// rollout that reuses the single-step half-width.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sohtl/dataset.hpp"
#include "sohtl/neuralnet.hpp"

namespace sohtl::conformal {

/// Maps input windows in physical units to SOH predictions in physical units.
using Predictor = std::function<std::vector<double>(std::span<const std::vector<data::Step>> windows)>;

/// Standardizes, runs the network and inverts the label transform.
Predictor model_predictor(nn::ModelParams model, data::Scaler scaler);

/// Sorted scores N^1 <= ... <= N^q followed by the +inf sentinel.
struct ScoreDistribution {
  std::vector<double> sorted;

  std::size_t q() const { return sorted.empty() ? 0 : sorted.size() - 1; }
};

ScoreDistribution scores_from_residuals(std::span<const double> preds, std::span<const double> labels);

/// Teacher-forced absolute residuals on calibration windows (physical units).
ScoreDistribution nonconformity_scores(const Predictor& predictor,
                                       std::span<const data::WindowSample> calibration);

/// p = ceil((q + 1)(1 - alpha)), 1 <= p <= q + 1.
std::size_t quantile_index(std::size_t q, double alpha);

struct EpsilonHat {
  double value = 0.0;
  std::size_t p = 0;
  bool infinite = false;
};

EpsilonHat epsilon_hat(const ScoreDistribution& scores, double alpha);

struct PredictionInterval {
  double center = 0.0;
  double half_width = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t step = 0;
};

PredictionInterval make_interval(double center, double eps_hat, std::size_t step = 0);

PredictionInterval predict_interval(const Predictor& predictor, const std::vector<data::Step>& window,
                                    double eps_hat, std::size_t step = 0);

/// Discharge/charge C-rates applied at one future step.
using Rates = std::array<double, 2>;

struct Forecast {
  std::vector<PredictionInterval> intervals;
  std::vector<double> point;
  bool diverged = false; // some prediction left [0, 1.05] and was clamped when fed back
};

inline constexpr double kRolloutMin = 0.0;
inline constexpr double kRolloutMax = 1.05;

/// Closed-loop forecast of `steps` future samples. Prediction k is appended to
/// the window together with future_rates[k] before predicting k + 1, so at
/// least steps - 1 rate pairs are needed.
Forecast rollout_forecast(const Predictor& predictor, std::vector<data::Step> seed_window,
                          std::span<const Rates> future_rates, std::size_t steps, double eps_hat);

/// Fraction of steps with lower <= truth <= upper.
double empirical_coverage(std::span<const PredictionInterval> intervals, std::span<const double> truths);

}  // namespace sohtl::conformal
