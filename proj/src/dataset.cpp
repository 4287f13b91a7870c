#include "sohtl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "sohtl/rng.hpp"

namespace sohtl::data {

UnlabeledWindow without_label(const WindowSample& s) {
  return UnlabeledWindow{s.window, s.cell_id, s.batch, s.step_index};
}

Windowed window_trajectory(const sim::SohTrajectory& traj, std::size_t w) {
  if (w == 0) throw ContractError("window_trajectory: window length must be positive");
  Windowed out;
  const auto& s = traj.samples;
  if (s.size() < w + 1) {
    out.insufficient_history = true;
    return out;
  }
  out.samples.reserve(s.size() - w);
  for (std::size_t j = 0; j + w < s.size(); ++j) {
    WindowSample ws;
    ws.window.reserve(w);
    for (std::size_t k = j; k < j + w; ++k) ws.window.push_back(to_step(s[k]));
    ws.label = s[j + w].soh;
    ws.cell_id = traj.cell_id;
    ws.batch = traj.batch;
    ws.step_index = j + w;
    out.samples.push_back(std::move(ws));
  }
  return out;
}

Scaler::Scaler(std::array<double, kNumFeatures> mean, std::array<double, kNumFeatures> stddev)
    : mean_(mean), stddev_(stddev) {
  for (std::size_t f = 0; f < kNumFeatures; ++f)
    if (!(stddev_[f] > 0.0) || !std::isfinite(stddev_[f]) || !std::isfinite(mean_[f]))
      throw ContractError(std::string("scaler: invalid statistics for feature ") + kFeatureNames[f]);
}

Step Scaler::apply(const Step& x) const {
  Step z;
  for (std::size_t f = 0; f < kNumFeatures; ++f) z[f] = (x[f] - mean_[f]) / stddev_[f];
  return z;
}

Step Scaler::invert(const Step& z) const {
  Step x;
  for (std::size_t f = 0; f < kNumFeatures; ++f) x[f] = z[f] * stddev_[f] + mean_[f];
  return x;
}

WindowSample Scaler::apply(const WindowSample& s) const {
  WindowSample out = s;
  for (auto& step : out.window) step = apply(step);
  out.label = apply_label(s.label);
  return out;
}

UnlabeledWindow Scaler::apply(const UnlabeledWindow& s) const {
  UnlabeledWindow out = s;
  for (auto& step : out.window) step = apply(step);
  return out;
}

Scaler fit_scaler(std::span<const WindowSample> samples) {
  if (samples.size() < 2) throw ContractError("fit_scaler: need at least 2 samples");
  std::array<double, kNumFeatures> mean{};
  std::size_t n = 0;
  for (const auto& s : samples) {
    for (const auto& step : s.window)
      for (std::size_t f = 0; f < kNumFeatures; ++f) mean[f] += step[f];
    n += s.window.size();
  }
  if (n < 2) throw ContractError("fit_scaler: need at least 2 observations");
  for (auto& m : mean) m /= static_cast<double>(n);

  std::array<double, kNumFeatures> var{};
  for (const auto& s : samples)
    for (const auto& step : s.window)
      for (std::size_t f = 0; f < kNumFeatures; ++f) {
        const double d = step[f] - mean[f];
        var[f] += d * d;
      }
  std::array<double, kNumFeatures> sd{};
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    sd[f] = std::sqrt(var[f] / static_cast<double>(n - 1));
    if (!(sd[f] > 0.0))
      throw DataError(std::string("fit_scaler: feature '") + kFeatureNames[f] +
                      "' has zero variance");
  }
  return Scaler(mean, sd);
}

CellPartition partition_cells(std::span<const CellRef> cells, const SplitOptions& options) {
  std::map<sim::Batch, std::vector<std::string>> by_batch;
  for (const auto& c : cells) by_batch[c.batch].push_back(c.cell_id);

  CellPartition part;
  for (auto& [batch, ids] : by_batch) {
    std::sort(ids.begin(), ids.end());
    if (batch == options.target_batch) {
      part.target.insert(part.target.end(), ids.begin(), ids.end());
      continue;
    }
    const std::size_t held = options.calib_per_batch + options.test_per_batch;
    if (ids.size() <= held)
      throw DataError("split: batch " + sim::to_string(batch) + " has " +
                      std::to_string(ids.size()) + " cells, need more than " +
                      std::to_string(held));
    Rng rng = make_stream(options.seed, 0x5b1177ULL, static_cast<std::uint64_t>(batch));
    std::shuffle(ids.begin(), ids.end(), rng);
    auto it = ids.begin();
    part.calibration.insert(part.calibration.end(), it, it + options.calib_per_batch);
    it += options.calib_per_batch;
    part.source_test.insert(part.source_test.end(), it, it + options.test_per_batch);
    it += options.test_per_batch;
    part.source_train.insert(part.source_train.end(), it, ids.end());
  }
  for (auto* v : {&part.source_train, &part.source_test, &part.calibration, &part.target})
    std::sort(v->begin(), v->end());
  return part;
}

TargetWindows target_windows(const sim::SohTrajectory& traj, std::size_t w, double cutoff_kah) {
  // Post-cutoff windows are assembled from inputs only; the SOH at their
  // label index is never read.
  TargetWindows out;
  const auto& s = traj.samples;
  for (std::size_t j = 0; j + w < s.size(); ++j) {
    std::vector<Step> window;
    window.reserve(w);
    for (std::size_t k = j; k < j + w; ++k) window.push_back(to_step(s[k]));
    if (s[j + w].throughput_kah <= cutoff_kah + 1e-9)
      out.labeled.push_back({std::move(window), s[j + w].soh, traj.cell_id, traj.batch, j + w});
    else
      out.unlabeled.push_back({std::move(window), traj.cell_id, traj.batch, j + w});
  }
  return out;
}

DomainSplit build_domain_split(std::span<const sim::SohTrajectory> trajectories,
                               const SplitOptions& options) {
  std::vector<CellRef> refs;
  refs.reserve(trajectories.size());
  std::set<std::string> seen;
  for (const auto& t : trajectories) {
    if (!seen.insert(t.cell_id).second) throw DataError("split: duplicate cell id " + t.cell_id);
    refs.push_back({t.cell_id, t.batch});
  }

  DomainSplit split;
  split.cells = partition_cells(refs, options);

  std::unordered_map<std::string, const sim::SohTrajectory*> by_id;
  for (const auto& t : trajectories) by_id.emplace(t.cell_id, &t);

  auto windows_of = [&](const std::string& id) {
    return window_trajectory(*by_id.at(id), options.window).samples;
  };
  for (const auto& id : split.cells.source_train) {
    auto w = windows_of(id);
    std::move(w.begin(), w.end(), std::back_inserter(split.source_labeled));
  }
  for (const auto& id : split.cells.calibration) {
    auto w = windows_of(id);
    std::move(w.begin(), w.end(), std::back_inserter(split.calibration));
  }
  for (const auto& id : split.cells.target) {
    auto tw = target_windows(*by_id.at(id), options.window, options.cutoff_kah);
    std::move(tw.labeled.begin(), tw.labeled.end(), std::back_inserter(split.target_labeled));
    std::move(tw.unlabeled.begin(), tw.unlabeled.end(), std::back_inserter(split.target_unlabeled));
  }
  return split;
}

std::map<sim::Batch, std::vector<WindowSample>> group_by_batch(std::span<const WindowSample> samples) {
  std::map<sim::Batch, std::vector<WindowSample>> out;
  for (const auto& s : samples) out[s.batch].push_back(s);
  return out;
}

}  // namespace sohtl::data
