#pragma once

// Sliding-window supervision, source-fitted standardization and the
// source/target/calibration partition.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sohtl/cell_sim.hpp"

namespace sohtl::data {

inline constexpr std::size_t kNumFeatures = 3;
inline constexpr std::size_t kSoh = 0;
inline constexpr std::size_t kRateDis = 1;
inline constexpr std::size_t kRateCh = 2;
inline constexpr const char* kFeatureNames[kNumFeatures] = {"soh", "c_rate_dis", "c_rate_ch"};

/// One time step of model input: (soh, c_rate_dis, c_rate_ch).
using Step = std::array<double, kNumFeatures>;

inline Step to_step(const sim::TrajectorySample& s) { return {s.soh, s.c_rate_dis, s.c_rate_ch}; }

/// w consecutive steps and the SOH of the step that follows them.
/// step_index is the trajectory index of the label.
struct WindowSample {
  std::vector<Step> window;
  double label = 0.0;
  std::string cell_id;
  sim::Batch batch = sim::Batch::B1;
  std::size_t step_index = 0;
};

/// Input-only window. There is deliberately no label member: code that is
/// handed these cannot read the withheld target.
struct UnlabeledWindow {
  std::vector<Step> window;
  std::string cell_id;
  sim::Batch batch = sim::Batch::B1;
  std::size_t step_index = 0;
};

UnlabeledWindow without_label(const WindowSample& sample);

struct Windowed {
  std::vector<WindowSample> samples;
  bool insufficient_history = false;
};

/// len - w samples; sample j covers steps j..j+w-1 and is labeled with step j+w.
Windowed window_trajectory(const sim::SohTrajectory& traj, std::size_t w);

class Scaler {
 public:
  Scaler() = default;
  Scaler(std::array<double, kNumFeatures> mean, std::array<double, kNumFeatures> stddev);

  const std::array<double, kNumFeatures>& mean() const { return mean_; }
  const std::array<double, kNumFeatures>& stddev() const { return stddev_; }

  Step apply(const Step& x) const;
  Step invert(const Step& x) const;
  // Labels share the SOH feature's statistics.
  double apply_label(double soh) const { return (soh - mean_[kSoh]) / stddev_[kSoh]; }
  double invert_label(double z) const { return z * stddev_[kSoh] + mean_[kSoh]; }
  WindowSample apply(const WindowSample& sample) const;
  UnlabeledWindow apply(const UnlabeledWindow& sample) const;

  bool operator==(const Scaler&) const = default;

 private:
  std::array<double, kNumFeatures> mean_{};
  std::array<double, kNumFeatures> stddev_{1.0, 1.0, 1.0};
};

/// Mean and (n-1)-denominator standard deviation over every step of every
/// window. Throws DataError naming a zero-variance feature.
Scaler fit_scaler(std::span<const WindowSample> samples);

struct CellRef {
  std::string cell_id;
  sim::Batch batch = sim::Batch::B1;
};

struct SplitOptions {
  std::size_t window = 10;
  double cutoff_kah = 20.0;
  std::size_t calib_per_batch = 10;
  std::size_t test_per_batch = 0;
  sim::Batch target_batch = sim::Batch::B2;
  std::uint64_t seed = 0;
};

struct CellPartition {
  std::vector<std::string> source_train;
  std::vector<std::string> source_test;
  std::vector<std::string> calibration;
  std::vector<std::string> target;

  bool operator==(const CellPartition&) const = default;
};

/// Assigns cells to partitions. Deterministic in (cell ids, options.seed)
/// and independent of input order.
CellPartition partition_cells(std::span<const CellRef> cells, const SplitOptions& options);

struct DomainSplit {
  CellPartition cells;
  std::vector<WindowSample> source_labeled;
  std::vector<WindowSample> target_labeled;      // label throughput <= cutoff
  std::vector<UnlabeledWindow> target_unlabeled; // label throughput > cutoff
  std::vector<WindowSample> calibration;
};

struct TargetWindows {
  std::vector<WindowSample> labeled;      // label throughput <= cutoff
  std::vector<UnlabeledWindow> unlabeled; // label throughput > cutoff
};

/// Windows of one target-domain trajectory.
TargetWindows target_windows(const sim::SohTrajectory& traj, std::size_t w, double cutoff_kah);

DomainSplit build_domain_split(std::span<const sim::SohTrajectory> trajectories,
                               const SplitOptions& options);

/// Source windows grouped per batch, in input order.
std::map<sim::Batch, std::vector<WindowSample>> group_by_batch(std::span<const WindowSample> samples);

}  // namespace sohtl::data
