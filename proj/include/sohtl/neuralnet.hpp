#pragma once

// LSTM encoder -> single-step LSTM decoder -> dense head, with exact
// reverse-mode gradients of  sum (y - yhat)^2 + lambda * MMD^2(z_s, z_t)
// and an Adam optimizer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sohtl/dataset.hpp"
#include "sohtl/mmd.hpp"

namespace sohtl::nn {

struct ModelShape {
  std::size_t input = data::kNumFeatures;
  std::size_t hidden = 32;
  std::size_t window = 10;

  bool operator==(const ModelShape&) const = default;
};

enum class ParamGroup { encoder, decoder, head };

/// Flat parameter storage with typed views. Gate blocks are stacked in the
/// order input, forget, cell, output.
class ModelParams {
 public:
  using MatMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  ModelParams() = default;
  /// All-zero parameters.
  explicit ModelParams(ModelShape shape);
  /// Weight matrices uniform in +-1/sqrt(fan_in), biases zero.
  static ModelParams initialized(ModelShape shape, std::uint64_t seed);

  const ModelShape& shape() const { return shape_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  MatMap enc_wx();
  MatMap enc_wh();
  VecMap enc_b();
  MatMap dec_wx();
  MatMap dec_wh();
  VecMap dec_b();
  VecMap head_w();
  double& head_b();
  ConstMatMap enc_wx() const;
  ConstMatMap enc_wh() const;
  ConstVecMap enc_b() const;
  ConstMatMap dec_wx() const;
  ConstMatMap dec_wh() const;
  ConstVecMap dec_b() const;
  ConstVecMap head_w() const;
  double head_b() const;

  /// [offset, offset + count) of a group inside values().
  std::pair<std::size_t, std::size_t> group_range(ParamGroup group) const;

  bool operator==(const ModelParams& other) const {
    return shape_ == other.shape_ && values_.size() == other.values_.size() &&
           values_ == other.values_;
  }

 private:
  std::size_t offset(int block) const;
  ModelShape shape_{};
  Eigen::VectorXd values_;
};

using Gradients = ModelParams;

/// Time-major mini-batch: steps[t] is (input x n).
struct SequenceBatch {
  std::vector<Eigen::MatrixXd> steps;
  std::size_t size() const { return steps.empty() ? 0 : static_cast<std::size_t>(steps.front().cols()); }
  bool empty() const { return size() == 0; }
};

SequenceBatch make_batch(std::span<const std::vector<data::Step>* const> windows);
SequenceBatch make_batch(std::span<const data::WindowSample> samples);
SequenceBatch make_batch(std::span<const data::UnlabeledWindow> samples);
Eigen::VectorXd labels_of(std::span<const data::WindowSample> samples);

struct ForwardResult {
  adapt::LatentBatch latent;   // n x hidden, encoder's final hidden state
  Eigen::MatrixXd decoded;     // hidden x n, decoder output
  Eigen::VectorXd predictions; // n
};

ForwardResult forward(const ModelParams& model, const SequenceBatch& batch);

/// Sum of squared errors; the mean is returned through `mean` when given.
double loss_source(const Eigen::VectorXd& predictions, const Eigen::VectorXd& labels,
                   double* mean = nullptr);

struct LossParts {
  double source = 0.0;
  double mmd2 = 0.0;
  double total = 0.0;
};

struct GradientResult {
  Gradients grads;
  LossParts loss;
};

/// Exact gradients of L_source(batch_s) + lambda * mmd2(z_s, z_t). With an
/// empty target batch or lambda == 0 the MMD term is skipped entirely.
GradientResult gradients(const ModelParams& model, const SequenceBatch& batch_s,
                         const Eigen::VectorXd& labels_s, const SequenceBatch& batch_t,
                         double lambda, double kernel_sigma);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct OptState {
  AdamConfig config;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::uint64_t t = 0;

  static OptState for_model(const ModelParams& model, AdamConfig config = {});
};

void adam_step(ModelParams& model, const Gradients& grads, OptState& opt);

/// Rescales grads in place so the global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  double clip_norm = 5.0;
  std::size_t patience = 0; // 0 disables early stopping
  // Cosine decay of the learning rate to this fraction of its base value
  // by the last epoch; 1 keeps it constant.
  double final_lr_fraction = 1.0;

  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double source = 0.0; // mean per-batch sum of squared errors
  double mmd2 = 0.0;   // mean per-batch squared MMD
  double total = 0.0;
  double sigma = 0.0;  // kernel bandwidth used during the epoch (0 if unused)
  double validation = 0.0;
};

struct TrainResult {
  ModelParams model;
  std::vector<EpochRecord> history;
};

/// Joint source/target training loop. `source` and `target` must already be
/// standardized. target may be empty; lambda == 0 ignores it.
TrainResult train_joint(ModelParams model, std::span<const data::WindowSample> source,
                        std::span<const data::UnlabeledWindow> target, double lambda,
                        const adapt::KernelConfig& kernel, const TrainConfig& config,
                        std::uint64_t seed, std::span<const data::WindowSample> validation = {});

/// Source-only training; same stream layout as train_joint with no target.
TrainResult train_epochs(ModelParams model, std::span<const data::WindowSample> source,
                         const TrainConfig& config, std::uint64_t seed,
                         std::span<const data::WindowSample> validation = {});

/// Predictions (standardized scale) for standardized samples, in batches.
Eigen::VectorXd predict(const ModelParams& model, std::span<const data::WindowSample> samples,
                        std::size_t batch_size = 256);

/// Latents for standardized input windows.
adapt::LatentBatch encode(const ModelParams& model, std::span<const data::UnlabeledWindow> windows,
                          std::size_t batch_size = 256);

}  // namespace sohtl::nn
