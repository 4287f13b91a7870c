#pragma once

// Run configuration: JSON on disk, strict key checking, dotted-path overrides.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sohtl/adapt.hpp"
#include "sohtl/cell_sim.hpp"
#include "sohtl/dataset.hpp"
#include "sohtl/neuralnet.hpp"

namespace sohtl::config {

struct SimulatorConfig {
  std::size_t cells_per_source_batch = 50; // training cells per source batch
  std::size_t target_cells = 10;
  double total_throughput_kah = 100.0;
  double segment_kah = 1.0;
  double record_interval_kah = 1.0;
  double spread_fraction = 0.05; // +- spread of the volume fractions
  double spread_to_sigma = 3.0;  // spread = spread_to_sigma * sigma
  // Target population: relative shift of the mean volume fractions and a
  // multiplier on the source sigma.
  double target_shift_n = -0.05;
  double target_shift_p = -0.05;
  double target_sigma_scale = 2.0;
  std::size_t steps_per_cycle = 200;
  double max_relative_change = 1e-3;
  double soh_floor = 0.5;
  double temperature = 298.0;
  sim::CellParams nominal{};

  bool operator==(const SimulatorConfig&) const = default;
};

struct ModelConfig {
  std::size_t window = 10;
  std::size_t hidden = 32;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  std::size_t patience = 0;
  double final_lr_fraction = 0.1;
  double clip_norm = 5.0;

  bool operator==(const ModelConfig&) const = default;
};

struct AdaptSection {
  std::optional<double> lambda; // empty means "lobo": use the tuned value
  std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  adapt::KernelConfig kernel{};
  std::size_t refine_points = 0;
  std::size_t tune_epochs = 10; // epochs per LOBO fit

  bool operator==(const AdaptSection&) const = default;
};

struct FineTuneSection {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;

  bool operator==(const FineTuneSection&) const = default;
};

struct ConformalSection {
  double alpha = 0.1;
  std::size_t calib_per_batch = 10;

  bool operator==(const ConformalSection&) const = default;
};

struct SplitSection {
  double cutoff_kah = 20.0;
  std::size_t test_per_batch = 5;
  sim::Batch target_batch = sim::Batch::B2;

  bool operator==(const SplitSection&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::size_t jobs = 1;
  std::string output = "run";
  SimulatorConfig simulator{};
  ModelConfig model{};
  AdaptSection adapt{};
  FineTuneSection finetune{};
  ConformalSection conformal{};
  SplitSection split{};

  bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError naming the offending field.
void validate(const RunConfig& config);

/// Parses JSON text. Missing keys keep their defaults; unknown keys are errors.
RunConfig parse(const std::string& json_text);
RunConfig load(const std::filesystem::path& path);

/// Applies "dotted.path=value" overrides; value is parsed as JSON when
/// possible and taken as a string otherwise.
RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& assignments);

/// Fully resolved JSON (every field present), stable key order.
std::string to_json(const RunConfig& config);
void write_resolved(const RunConfig& config, const std::filesystem::path& path);

/// Stable hash of the resolved JSON text.
std::uint64_t config_hash(const RunConfig& config);

// Derived settings for the library modules.
data::SplitOptions split_options(const RunConfig& config);
nn::ModelShape model_shape(const RunConfig& config);
adapt::AdaptConfig adapt_config(const RunConfig& config);
adapt::FineTuneConfig finetune_config(const RunConfig& config);
sim::IntegratorSettings integrator_settings(const RunConfig& config);

}  // namespace sohtl::config
