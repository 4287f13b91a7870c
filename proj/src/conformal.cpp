#include "sohtl/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "sohtl/error.hpp"

namespace sohtl::conformal {

Predictor model_predictor(nn::ModelParams model, data::Scaler scaler) {
  return [model = std::move(model), scaler = std::move(scaler)](std::span<const std::vector<data::Step>> windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    constexpr std::size_t kChunk = 256;
    std::vector<std::vector<data::Step>> scaled;
    std::vector<const std::vector<data::Step>*> ptrs;
    for (std::size_t start = 0; start < windows.size(); start += kChunk) {
      const std::size_t stop = std::min(windows.size(), start + kChunk);
      scaled.assign(windows.begin() + static_cast<std::ptrdiff_t>(start),
                    windows.begin() + static_cast<std::ptrdiff_t>(stop));
      ptrs.clear();
      for (auto& w : scaled) {
        for (auto& s : w) s = scaler.apply(s);
        ptrs.push_back(&w);
      }
      const auto f = nn::forward(model, nn::make_batch(ptrs));
      for (Eigen::Index i = 0; i < f.predictions.size(); ++i) out.push_back(scaler.invert_label(f.predictions(i)));
    }
    return out;
  };
}

ScoreDistribution scores_from_residuals(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) throw ContractError("nonconformity scores: length mismatch");
  if (preds.empty()) throw ContractError("nonconformity scores: empty calibration set");
  ScoreDistribution d;
  d.sorted.reserve(preds.size() + 1);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = std::abs(preds[i] - labels[i]);
    if (!std::isfinite(r)) throw NumericError("nonconformity scores: non-finite residual at sample " + std::to_string(i));
    d.sorted.push_back(r);
  }
  std::sort(d.sorted.begin(), d.sorted.end());
  d.sorted.push_back(std::numeric_limits<double>::infinity());
  return d;
}

ScoreDistribution nonconformity_scores(const Predictor& predictor,
                                       std::span<const data::WindowSample> calibration) {
  if (calibration.empty()) throw ContractError("nonconformity scores: empty calibration set");
  std::vector<std::vector<data::Step>> windows;
  std::vector<double> labels;
  windows.reserve(calibration.size());
  labels.reserve(calibration.size());
  for (const auto& s : calibration) {
    windows.push_back(s.window);
    labels.push_back(s.label);
  }
  const std::vector<double> preds = predictor(windows);
  return scores_from_residuals(preds, labels);
}

std::size_t quantile_index(std::size_t q, double alpha) {
  if (q == 0) throw ContractError("quantile_index: q must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("quantile_index: alpha must lie in (0, 1)");
  // The small guard keeps exact products such as 10 * 0.9 from rounding up.
  const double x = static_cast<double>(q + 1) * (1.0 - alpha);
  const auto p = static_cast<std::size_t>(std::ceil(x - 1e-9));
  return std::clamp<std::size_t>(p, 1, q + 1);
}

EpsilonHat epsilon_hat(const ScoreDistribution& scores, double alpha) {
  if (scores.sorted.size() < 2 || !std::isinf(scores.sorted.back()))
    throw ContractError("epsilon_hat: score distribution needs at least one score and the sentinel");
  EpsilonHat e;
  e.p = quantile_index(scores.q(), alpha);
  e.value = scores.sorted[e.p - 1];
  e.infinite = std::isinf(e.value);
  return e;
}

PredictionInterval make_interval(double center, double eps_hat, std::size_t step) {
  if (!(eps_hat >= 0.0)) throw ContractError("prediction interval: eps_hat must be non-negative");
  return {center, eps_hat, center - eps_hat, center + eps_hat, step};
}

PredictionInterval predict_interval(const Predictor& predictor, const std::vector<data::Step>& window,
                                    double eps_hat, std::size_t step) {
  const std::vector<double> y = predictor(std::span(&window, 1));
  return make_interval(y.at(0), eps_hat, step);
}

Forecast rollout_forecast(const Predictor& predictor, std::vector<data::Step> seed_window,
                          std::span<const Rates> future_rates, std::size_t steps, double eps_hat) {
  if (!(eps_hat >= 0.0)) throw ContractError("rollout_forecast: eps_hat must be non-negative");
  Forecast f;
  if (steps == 0) return f;
  if (seed_window.empty()) throw ContractError("rollout_forecast: empty seed window");
  if (future_rates.size() + 1 < steps)
    throw ContractError("rollout_forecast: protocol tail shorter than the forecast horizon");

  f.intervals.reserve(steps);
  f.point.reserve(steps);
  std::vector<data::Step> window = std::move(seed_window);
  for (std::size_t k = 0; k < steps; ++k) {
    const double y = predictor(std::span(&window, 1)).at(0);
    if (!std::isfinite(y)) throw NumericError("rollout_forecast: non-finite prediction at step " + std::to_string(k));
    f.point.push_back(y);
    f.intervals.push_back(make_interval(y, eps_hat, k));
    if (y < kRolloutMin || y > kRolloutMax) f.diverged = true;
    if (k + 1 == steps) break;
    window.erase(window.begin());
    window.push_back({std::clamp(y, kRolloutMin, kRolloutMax), future_rates[k][0], future_rates[k][1]});
  }
  return f;
}

double empirical_coverage(std::span<const PredictionInterval> intervals, std::span<const double> truths) {
  if (intervals.size() != truths.size()) throw ContractError("empirical_coverage: length mismatch");
  if (intervals.empty()) throw ContractError("empirical_coverage: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i)
    if (intervals[i].lower <= truths[i] && truths[i] <= intervals[i].upper) ++hit;
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

}  // namespace sohtl::conformal
