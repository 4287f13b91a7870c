#pragma once

// MMD domain adaptation: joint training, leave-one-batch-out selection of the
// MMD weight, and the dense-head fine-tuning baseline.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "sohtl/dataset.hpp"
#include "sohtl/mmd.hpp"
#include "sohtl/neuralnet.hpp"

namespace sohtl::adapt {

struct AdaptConfig {
  nn::ModelShape shape{};
  nn::TrainConfig train{};
  KernelConfig kernel{};
};

/// L_source(batch_s) + lambda * mmd2(z_s, z_t); the MMD term is dropped when
/// lambda == 0 or batch_t is empty.
double total_loss(const nn::ModelParams& model, const nn::SequenceBatch& batch_s,
                  const Eigen::VectorXd& labels_s, const nn::SequenceBatch& batch_t, double lambda,
                  double kernel_sigma);

/// Trains a freshly initialized model on standardized source windows, pairing
/// every source mini-batch with a target mini-batch. With lambda == 0 the
/// result equals source-only training under the same seed.
nn::TrainResult train_adapted(std::span<const data::WindowSample> source,
                              std::span<const data::UnlabeledWindow> target, double lambda,
                              const AdaptConfig& config, std::uint64_t seed,
                              std::span<const data::WindowSample> validation = {});

/// Labeled windows of the source domain, keyed by batch. Nothing else is
/// accepted by the tuner.
using SourceBatches = std::map<sim::Batch, std::vector<data::WindowSample>>;

struct LoboResult {
  std::vector<double> grid;
  std::vector<sim::Batch> folds;
  std::vector<std::vector<double>> rmse; // [lambda index][fold], % SOH
  std::vector<double> score;             // mean over folds
  double lambda_star = 0.0;
  std::size_t star_index = 0;

  bool operator==(const LoboResult&) const = default;
};

/// Index of the smallest score; exact ties go to the smaller grid value.
std::size_t select_lambda(std::span<const double> grid, std::span<const double> scores);

struct LoboOptions {
  std::size_t refine_points = 0; // extra points spread around the coarse argmin
  std::size_t jobs = 1;
};

/// Leave-one-batch-out tuning. For every lambda and held-out batch b: fit a
/// scaler and train on the remaining batches with b's inputs as unlabeled
/// pseudo-target, then score single-step RMSE against b's labels.
/// Windows are in physical units.
LoboResult lobo_tune(const SourceBatches& source_batches, std::span<const double> lambda_grid,
                     const AdaptConfig& config, std::uint64_t seed, const LoboOptions& options = {});

struct FineTuneConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  nn::AdamConfig adam{};

  bool operator==(const FineTuneConfig&) const = default;
};

/// Retrains only the dense head on standardized target windows; encoder and
/// decoder parameters are returned bit-identical.
nn::TrainResult fine_tune_dense(nn::ModelParams model, std::span<const data::WindowSample> target_labeled,
                                const FineTuneConfig& config, std::uint64_t seed);

}  // namespace sohtl::adapt
