#pragma once

// On-disk layout of a run directory and the text formats inside it.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sohtl/adapt.hpp"
#include "sohtl/cell_sim.hpp"
#include "sohtl/conformal.hpp"
#include "sohtl/dataset.hpp"
#include "sohtl/neuralnet.hpp"

namespace sohtl::bundle {

namespace fs = std::filesystem;

/// Shortest text that parses back to the same double.
std::string format_double(double x);
double parse_double(std::string_view text, const std::string& context);

/// Every file read through a Bundle is recorded here.
class AccessLog {
 public:
  void record(const fs::path& path);
  std::vector<std::string> reads() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<std::string> reads_;
};

class Bundle {
 public:
  explicit Bundle(fs::path root, std::shared_ptr<AccessLog> log = std::make_shared<AccessLog>());

  const fs::path& root() const { return root_; }
  AccessLog& log() const { return *log_; }

  fs::path resolved_config() const { return root_ / "config.resolved.json"; }
  fs::path manifest() const { return root_ / "data" / "manifest.json"; }
  fs::path split() const { return root_ / "data" / "split.json"; }
  fs::path cell_csv(const std::string& cell_id) const { return root_ / "data" / "cells" / (cell_id + ".csv"); }
  fs::path checkpoint(const std::string& variant) const { return root_ / "models" / (variant + ".json"); }
  fs::path history(const std::string& variant) const { return root_ / "models" / (variant + "_history.csv"); }
  fs::path lobo_csv() const { return root_ / "tune" / "lobo.csv"; }
  fs::path lobo_json() const { return root_ / "tune" / "lobo.json"; }
  fs::path calibration(const std::string& variant) const { return root_ / "calibration" / (variant + ".json"); }
  fs::path forecast(const std::string& variant, const std::string& cell_id) const {
    return root_ / "forecast" / variant / (cell_id + ".csv");
  }
  fs::path report_csv() const { return root_ / "eval" / "report.csv"; }
  fs::path coverage_csv() const { return root_ / "eval" / "coverage.csv"; }
  fs::path scatter_csv(const std::string& variant) const { return root_ / "eval" / ("scatter_" + variant + ".csv"); }
  fs::path plot_dir() const { return root_ / "plot"; }

  /// Reads a whole file, recording the access. DataError if unreadable.
  std::string read_text(const fs::path& path) const;

 private:
  fs::path root_;
  std::shared_ptr<AccessLog> log_;
};

/// Creates parent directories and writes the file in binary mode.
void write_text(const fs::path& path, const std::string& content);

// Trajectory CSV: throughput_kAh, soh, c_rate_dis, c_rate_ch
std::string trajectory_csv(const sim::SohTrajectory& traj);
std::vector<sim::TrajectorySample> parse_trajectory_csv(const std::string& text, const std::string& context);

struct ManifestEntry {
  std::string cell_id;
  sim::Batch batch = sim::Batch::B1;
  double eps_am_n = 0.0;
  double eps_am_p = 0.0;
  std::uint64_t seed = 0; // protocol seed
  bool truncated = false;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> cells;

  bool operator==(const Manifest&) const = default;
};

std::string manifest_json(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);

struct SplitFile {
  data::CellPartition cells;
  data::Scaler scaler;
  std::size_t window = 0;
  double cutoff_kah = 0.0;
  sim::Batch target_batch = sim::Batch::B2;

  bool operator==(const SplitFile&) const = default;
};

std::string split_json(const SplitFile& split);
SplitFile parse_split(const std::string& text);

struct Checkpoint {
  std::string variant;
  nn::ModelParams model;
  data::Scaler scaler;
  std::uint64_t config_hash = 0;
  std::optional<double> lambda;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_json(const Checkpoint& checkpoint);
/// Rejects unknown versions, parameter counts that disagree with the shape
/// header, and (when given) a shape different from `expected`.
Checkpoint parse_checkpoint(const std::string& text, const std::optional<nn::ModelShape>& expected = std::nullopt);

// epoch, L_source, MMD2, L_total
std::string history_csv(const std::vector<nn::EpochRecord>& history);

std::string lobo_csv(const adapt::LoboResult& result);
std::string lobo_json(const adapt::LoboResult& result);
double parse_lobo_lambda(const std::string& text);

struct CalibrationFile {
  std::string variant;
  double alpha = 0.1;
  std::size_t q = 0;
  std::size_t p = 0;
  double eps_hat = 0.0;
  bool infinite = false;

  bool operator==(const CalibrationFile&) const = default;
};

std::string calibration_json(const CalibrationFile& c);
CalibrationFile parse_calibration(const std::string& text);

/// step, throughput_kAh, soh_true, soh_pred, lower, upper. Empty soh_true
/// cells mean the truth is unknown.
std::string forecast_csv(std::span<const double> throughput_kah, std::span<const std::optional<double>> truths,
                         const conformal::Forecast& forecast);

}  // namespace sohtl::bundle
