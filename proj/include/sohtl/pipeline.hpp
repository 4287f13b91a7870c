#pragma once

// Pipeline stages behind the CLI. Each stage reads and writes a run
// directory (see bundle.hpp).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sohtl/bundle.hpp"
#include "sohtl/config.hpp"
#include "sohtl/conformal.hpp"

namespace sohtl::pipeline {

enum class Variant { baseline, finetune, adapted };

inline constexpr Variant kAllVariants[] = {Variant::baseline, Variant::finetune, Variant::adapted};

std::string to_string(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& name);

/// Simulates every batch, writes trajectories, manifest and split file.
void cmd_generate(const config::RunConfig& config, const bundle::Bundle& bundle);

/// Trains one model variant and writes its checkpoint and history.
bundle::Checkpoint cmd_train(const config::RunConfig& config, const bundle::Bundle& bundle, Variant variant);

/// Leave-one-batch-out selection of the MMD weight. Reads source training
/// cells only.
adapt::LoboResult cmd_tune(const config::RunConfig& config, const bundle::Bundle& bundle);

/// Conformal half-width for a trained variant from the calibration cells.
bundle::CalibrationFile cmd_calibrate(const config::RunConfig& config, const bundle::Bundle& bundle,
                                      Variant variant);

/// Closed-loop forecasts from the cutoff for every target cell.
void cmd_forecast(const config::RunConfig& config, const bundle::Bundle& bundle, Variant variant);

struct EvalRow {
  std::string variant;
  std::string domain; // "source" (held-out source cells) or "target"
  double rmse_pct = 0.0;
  double r2 = 0.0;
  double coverage_rollout = 0.0;
  double coverage_single_step = 0.0;
  double mean_width_pct = 0.0;
  double eps_hat_pct = 0.0;
  std::size_t points = 0;
  std::size_t diverged_cells = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::optional<double> lambda;
  std::string lambda_source; // "config" or "lobo"

  const EvalRow& row(const std::string& variant, const std::string& domain) const;
};

std::string report_csv(const EvalReport& report);

/// Held-out cells used for scoring, already loaded.
struct EvalData {
  std::vector<sim::SohTrajectory> source_test;
  std::vector<sim::SohTrajectory> target;
  std::vector<data::WindowSample> calibration;
  std::size_t window = 0;
  double cutoff_kah = 0.0;
  double alpha = 0.1;
};

struct CellForecast {
  std::string cell_id;
  std::vector<double> throughput_kah;
  std::vector<double> truth;
  conformal::Forecast forecast;
};

/// Rollouts from the cutoff for each trajectory long enough to have one.
std::vector<CellForecast> rollout_cells(const conformal::Predictor& predictor,
                                        std::span<const sim::SohTrajectory> cells, std::size_t window,
                                        double cutoff_kah, double eps_hat);

/// Calibrates, rolls out and scores one predictor on both domains.
std::vector<EvalRow> evaluate_predictor(const std::string& variant, const conformal::Predictor& predictor,
                                        const EvalData& data, std::vector<CellForecast>* target_forecasts = nullptr);

/// Full evaluation: loads every checkpoint, writes report, coverage,
/// forecasts and scatter files.
EvalReport cmd_evaluate(const config::RunConfig& config, const bundle::Bundle& bundle);

/// Plain CSV tables for plotting.
void cmd_export_plot(const config::RunConfig& config, const bundle::Bundle& bundle);

// Helpers shared with tests.
bundle::Manifest load_manifest(const bundle::Bundle& bundle);
bundle::SplitFile load_split(const bundle::Bundle& bundle);
/// Reads exactly the named cells' trajectory files.
std::vector<sim::SohTrajectory> load_cells(const config::RunConfig& config, const bundle::Bundle& bundle,
                                           const bundle::Manifest& manifest, const std::vector<std::string>& ids);
bundle::Checkpoint load_checkpoint(const config::RunConfig& config, const bundle::Bundle& bundle, Variant variant);

}  // namespace sohtl::pipeline
