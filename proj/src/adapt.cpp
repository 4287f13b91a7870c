#include "sohtl/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sohtl/error.hpp"
#include "sohtl/metrics.hpp"
#include "sohtl/parallel.hpp"
#include "sohtl/rng.hpp"

namespace sohtl::adapt {

double total_loss(const nn::ModelParams& model, const nn::SequenceBatch& batch_s,
                  const Eigen::VectorXd& labels_s, const nn::SequenceBatch& batch_t, double lambda,
                  double kernel_sigma) {
  const nn::ForwardResult fs = nn::forward(model, batch_s);
  const double source = nn::loss_source(fs.predictions, labels_s);
  if (lambda == 0.0 || batch_t.empty()) return source;
  const nn::ForwardResult ft = nn::forward(model, batch_t);
  return source + lambda * mmd2(fs.latent, ft.latent, kernel_sigma);
}

nn::TrainResult train_adapted(std::span<const data::WindowSample> source,
                              std::span<const data::UnlabeledWindow> target, double lambda,
                              const AdaptConfig& config, std::uint64_t seed,
                              std::span<const data::WindowSample> validation) {
  if (lambda < 0.0) throw ContractError("train_adapted: lambda must be non-negative");
  auto model = nn::ModelParams::initialized(config.shape, seed);
  return nn::train_joint(std::move(model), source, target, lambda, config.kernel, config.train, seed,
                         validation);
}

std::size_t select_lambda(std::span<const double> grid, std::span<const double> scores) {
  if (grid.empty() || grid.size() != scores.size())
    throw ContractError("select_lambda: grid and scores must be non-empty and aligned");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (scores[i] < scores[best] || (scores[i] == scores[best] && grid[i] < grid[best])) best = i;
  }
  return best;
}

namespace {

struct Fold {
  sim::Batch held_out;
  data::Scaler scaler;
  std::vector<data::WindowSample> train;
  std::vector<data::UnlabeledWindow> pseudo_target;
  std::vector<data::WindowSample> held_out_scaled;
  std::vector<double> held_out_labels;
};

std::vector<Fold> make_folds(const SourceBatches& batches) {
  std::vector<Fold> folds;
  for (const auto& [held, held_windows] : batches) {
    Fold f;
    f.held_out = held;
    std::vector<data::WindowSample> raw_train;
    for (const auto& [b, w] : batches)
      if (b != held) raw_train.insert(raw_train.end(), w.begin(), w.end());
    f.scaler = data::fit_scaler(raw_train);
    f.train.reserve(raw_train.size());
    for (const auto& s : raw_train) f.train.push_back(f.scaler.apply(s));
    for (const auto& s : held_windows) {
      f.held_out_scaled.push_back(f.scaler.apply(s));
      f.pseudo_target.push_back(data::without_label(f.held_out_scaled.back()));
      f.held_out_labels.push_back(s.label);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

double fold_rmse(const Fold& f, double lambda, const AdaptConfig& config, std::uint64_t seed) {
  const nn::TrainResult tr = train_adapted(f.train, f.pseudo_target, lambda, config, seed);
  const Eigen::VectorXd z = nn::predict(tr.model, f.held_out_scaled);
  std::vector<double> preds(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) preds[static_cast<std::size_t>(i)] = f.scaler.invert_label(z(i));
  return metric_rmse(preds, f.held_out_labels);
}

}  // namespace

LoboResult lobo_tune(const SourceBatches& source_batches, std::span<const double> lambda_grid,
                     const AdaptConfig& config, std::uint64_t seed, const LoboOptions& options) {
  if (source_batches.size() < 2) throw ContractError("lobo_tune: need at least 2 source batches");
  if (lambda_grid.empty()) throw ContractError("lobo_tune: empty lambda grid");
  for (double l : lambda_grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ContractError("lobo_tune: grid values must lie in [0, 1]");
  for (const auto& [b, w] : source_batches)
    if (w.empty()) throw ContractError("lobo_tune: batch " + sim::to_string(b) + " has no windows");

  const std::vector<Fold> folds = make_folds(source_batches);

  LoboResult result;
  for (const auto& f : folds) result.folds.push_back(f.held_out);

  // Evaluates grid points [first, grid.size()) and appends their rows.
  auto evaluate = [&](std::size_t first) {
    const std::size_t n_lambda = result.grid.size() - first;
    const std::size_t n_folds = folds.size();
    std::vector<double> cells(n_lambda * n_folds);
    parallel_for(cells.size(), options.jobs, [&](std::size_t job) {
      const std::size_t li = first + job / n_folds;
      const std::size_t fi = job % n_folds;
      // Stream keyed by (seed, lambda index, fold) so scheduling never matters.
      const std::uint64_t job_seed = make_stream(seed, li + 1, fi + 1)();
      cells[job] = fold_rmse(folds[fi], result.grid[li], config, job_seed);
    });
    for (std::size_t l = 0; l < n_lambda; ++l) {
      std::vector<double> row(cells.begin() + static_cast<std::ptrdiff_t>(l * n_folds),
                              cells.begin() + static_cast<std::ptrdiff_t>((l + 1) * n_folds));
      result.score.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(n_folds));
      result.rmse.push_back(std::move(row));
    }
  };

  result.grid.assign(lambda_grid.begin(), lambda_grid.end());
  evaluate(0);

  if (options.refine_points > 0 && result.grid.size() > 1) {
    const std::size_t coarse = select_lambda(result.grid, result.score);
    std::vector<double> sorted = result.grid;
    std::sort(sorted.begin(), sorted.end());
    const auto pos = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), result.grid[coarse]) - sorted.begin());
    const double lo = sorted[pos == 0 ? 0 : pos - 1];
    const double hi = sorted[std::min(pos + 1, sorted.size() - 1)];
    const std::set<double> existing(result.grid.begin(), result.grid.end());
    const std::size_t first = result.grid.size();
    for (std::size_t k = 1; k <= options.refine_points; ++k) {
      const double l = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(options.refine_points + 1);
      if (!existing.contains(l)) result.grid.push_back(l);
    }
    if (result.grid.size() > first) evaluate(first);
  }

  result.star_index = select_lambda(result.grid, result.score);
  result.lambda_star = result.grid[result.star_index];
  return result;
}

nn::TrainResult fine_tune_dense(nn::ModelParams model, std::span<const data::WindowSample> target_labeled,
                                const FineTuneConfig& config, std::uint64_t seed) {
  if (target_labeled.empty()) throw ContractError("fine_tune_dense: empty target set");
  if (config.batch_size == 0) throw ContractError("fine_tune_dense: batch_size must be positive");

  nn::TrainResult result;
  if (config.epochs == 0) {
    result.model = std::move(model);
    return result;
  }

  // Encoder and decoder are frozen, so decoder outputs are computed once.
  const Eigen::MatrixXd h = nn::forward(model, nn::make_batch(target_labeled)).decoded;
  const Eigen::VectorXd y = nn::labels_of(target_labeled);
  const auto [head_off, head_len] = model.group_range(nn::ParamGroup::head);

  nn::OptState opt = nn::OptState::for_model(model, config.adam);
  Rng rng = make_stream(seed, 0xf17eULL);
  std::vector<std::size_t> order(target_labeled.size());
  nn::Gradients grads(model.shape());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    nn::EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      grads.values().setZero();
      auto gw = grads.head_w();
      double gb = 0.0;
      double sse = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const auto j = static_cast<Eigen::Index>(order[k]);
        const double diff = model.head_w().dot(h.col(j)) + model.head_b() - y(j);
        sse += diff * diff;
        gw += 2.0 * diff * h.col(j);
        gb += 2.0 * diff;
      }
      grads.head_b() = gb;
      // Copy back only the head block so frozen groups stay bit-identical.
      nn::ModelParams before = model;
      nn::adam_step(model, grads, opt);
      const auto off = static_cast<Eigen::Index>(head_off);
      const auto len = static_cast<Eigen::Index>(head_len);
      before.values().segment(off, len) = model.values().segment(off, len);
      model = std::move(before);
      rec.source += sse;
      ++n_batches;
    }
    rec.source /= static_cast<double>(n_batches);
    rec.total = rec.source;
    if (!std::isfinite(rec.total)) throw NumericError("fine-tuning diverged at epoch " + std::to_string(rec.epoch));
    result.history.push_back(rec);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace sohtl::adapt
