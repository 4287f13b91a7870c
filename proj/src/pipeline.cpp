#include "sohtl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "sohtl/error.hpp"
#include "sohtl/metrics.hpp"
#include "sohtl/parallel.hpp"
#include "sohtl/rng.hpp"

namespace sohtl::pipeline {

namespace {

std::string cell_name(sim::Batch b, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%03zu", sim::to_string(b).c_str(), i);
  return buf;
}

std::uint64_t stage_seed(const config::RunConfig& c, const char* stage) { return make_stream(c.seed, stage)(); }

void check_bundle_matches(const config::RunConfig& c, const bundle::SplitFile& s) {
  if (s.window != c.model.window)
    throw ConfigError("model.window is " + std::to_string(c.model.window) + " but the dataset was windowed with " +
                      std::to_string(s.window));
  if (s.cutoff_kah != c.split.cutoff_kah || s.target_batch != c.split.target_batch)
    throw ConfigError("split settings differ from those the dataset was generated with");
}

std::vector<data::WindowSample> labeled_windows(std::span<const sim::SohTrajectory> cells, std::size_t w) {
  std::vector<data::WindowSample> out;
  for (const auto& t : cells) {
    auto ws = data::window_trajectory(t, w).samples;
    std::move(ws.begin(), ws.end(), std::back_inserter(out));
  }
  return out;
}

template <class T>
std::vector<T> scaled(const data::Scaler& s, std::span<const T> in) {
  std::vector<T> out;
  out.reserve(in.size());
  for (const auto& x : in) out.push_back(s.apply(x));
  return out;
}

// Index of the last sample at or before the cutoff, if any.
std::optional<std::size_t> cutoff_index(const sim::SohTrajectory& t, double cutoff_kah) {
  std::optional<std::size_t> c;
  for (std::size_t i = 0; i < t.samples.size(); ++i)
    if (t.samples[i].throughput_kah <= cutoff_kah + 1e-9) c = i;
  return c;
}

void write_resolved_beside(const config::RunConfig& c, const bundle::fs::path& dir) {
  bundle::write_text(dir / "config.resolved.json", config::to_json(c));
}

std::string fmt(double x) { return bundle::format_double(x); }

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::finetune: return "finetune";
    case Variant::adapted: return "adapted";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (auto v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown model variant '" + name + "' (expected baseline, finetune or adapted)");
}

bundle::Manifest load_manifest(const bundle::Bundle& b) { return bundle::parse_manifest(b.read_text(b.manifest())); }

bundle::SplitFile load_split(const bundle::Bundle& b) { return bundle::parse_split(b.read_text(b.split())); }

std::vector<sim::SohTrajectory> load_cells(const config::RunConfig& c, const bundle::Bundle& b,
                                           const bundle::Manifest& manifest, const std::vector<std::string>& ids) {
  std::map<std::string, const bundle::ManifestEntry*> by_id;
  for (const auto& e : manifest.cells) by_id[e.cell_id] = &e;
  std::vector<sim::SohTrajectory> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("cell " + id + " is not listed in the manifest");
    sim::SohTrajectory t;
    t.cell_id = id;
    t.batch = it->second->batch;
    t.params = c.simulator.nominal;
    t.params.eps_am_n = it->second->eps_am_n;
    t.params.eps_am_p = it->second->eps_am_p;
    t.truncated = it->second->truncated;
    const auto path = b.cell_csv(id);
    t.samples = bundle::parse_trajectory_csv(b.read_text(path), path.string());
    if (t.samples.empty()) throw DataError(path.string() + ": no samples");
    out.push_back(std::move(t));
  }
  return out;
}

bundle::Checkpoint load_checkpoint(const config::RunConfig& c, const bundle::Bundle& b, Variant v) {
  const auto path = b.checkpoint(to_string(v));
  if (!bundle::fs::exists(path))
    throw DataError("missing checkpoint for variant '" + to_string(v) + "' (" + path.string() + ")");
  return bundle::parse_checkpoint(b.read_text(path), config::model_shape(c));
}

void cmd_generate(const config::RunConfig& c, const bundle::Bundle& b) {
  config::validate(c);
  const auto& s = c.simulator;
  const double rel_sigma = s.spread_fraction / s.spread_to_sigma;

  struct Job {
    std::string id;
    sim::Batch batch;
    sim::CellParams params;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto batch : sim::kAllBatches) {
    sim::CellParams nominal = s.nominal;
    double sigma = rel_sigma;
    std::size_t n = s.cells_per_source_batch + c.conformal.calib_per_batch + c.split.test_per_batch;
    if (batch == c.split.target_batch) {
      nominal.eps_am_n *= 1.0 + s.target_shift_n;
      nominal.eps_am_p *= 1.0 + s.target_shift_p;
      sigma *= s.target_sigma_scale;
      n = s.target_cells;
    }
    const auto pop =
        sim::sample_population(n, nominal, sigma, make_stream(c.seed, 0x9090ULL, static_cast<std::uint64_t>(batch))());
    for (std::size_t i = 0; i < n; ++i) {
      std::string id = cell_name(batch, i);
      const std::uint64_t seed = splitmix64(c.seed ^ stable_hash(id));
      jobs.push_back({std::move(id), batch, pop[i], seed});
    }
  }

  sim::Constants constants;
  constants.temperature = s.temperature;
  const auto settings = config::integrator_settings(c);
  std::vector<sim::SohTrajectory> trajs(jobs.size());
  parallel_for(jobs.size(), c.jobs, [&](std::size_t i) {
    const auto& j = jobs[i];
    const auto protocol = sim::make_protocol(j.batch, s.total_throughput_kah * 1000.0, s.segment_kah * 1000.0, j.seed);
    trajs[i] = sim::simulate_cell(j.id, j.params, protocol, constants, settings);
  });

  bundle::Manifest manifest;
  manifest.seed = c.seed;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    bundle::write_text(b.cell_csv(jobs[i].id), bundle::trajectory_csv(trajs[i]));
    manifest.cells.push_back({jobs[i].id, jobs[i].batch, jobs[i].params.eps_am_n, jobs[i].params.eps_am_p,
                              jobs[i].seed, trajs[i].truncated});
  }
  bundle::write_text(b.manifest(), bundle::manifest_json(manifest));

  const auto split = data::build_domain_split(trajs, config::split_options(c));
  bundle::SplitFile sf;
  sf.cells = split.cells;
  sf.scaler = data::fit_scaler(split.source_labeled);
  sf.window = c.model.window;
  sf.cutoff_kah = c.split.cutoff_kah;
  sf.target_batch = c.split.target_batch;
  bundle::write_text(b.split(), bundle::split_json(sf));
  write_resolved_beside(c, b.manifest().parent_path());
}

adapt::LoboResult cmd_tune(const config::RunConfig& c, const bundle::Bundle& b) {
  config::validate(c);
  const auto split = load_split(b);
  check_bundle_matches(c, split);
  const auto manifest = load_manifest(b);
  // Only source training cells are opened here.
  const auto cells = load_cells(c, b, manifest, split.cells.source_train);
  const auto windows = labeled_windows(cells, c.model.window);
  const auto batches = data::group_by_batch(windows);

  auto ac = config::adapt_config(c);
  ac.train.epochs = c.adapt.tune_epochs;
  adapt::LoboOptions opts;
  opts.jobs = c.jobs;
  opts.refine_points = c.adapt.refine_points;
  const auto result = adapt::lobo_tune(batches, c.adapt.grid, ac, stage_seed(c, "lobo"), opts);

  bundle::write_text(b.lobo_csv(), bundle::lobo_csv(result));
  bundle::write_text(b.lobo_json(), bundle::lobo_json(result));
  write_resolved_beside(c, b.lobo_csv().parent_path());
  return result;
}

namespace {

nn::TrainResult train_source_only(const config::RunConfig& c, std::span<const data::WindowSample> source,
                                  std::span<const data::WindowSample> validation) {
  return adapt::train_adapted(source, {}, 0.0, config::adapt_config(c), stage_seed(c, "train"), validation);
}

}  // namespace

bundle::Checkpoint cmd_train(const config::RunConfig& c, const bundle::Bundle& b, Variant variant) {
  config::validate(c);
  const auto split = load_split(b);
  check_bundle_matches(c, split);
  const auto manifest = load_manifest(b);
  const auto& scaler = split.scaler;
  const std::size_t w = c.model.window;

  const auto train_cells = load_cells(c, b, manifest, split.cells.source_train);
  const auto source_raw = labeled_windows(train_cells, w);
  const auto source = scaled<data::WindowSample>(scaler, source_raw);
  std::vector<data::WindowSample> validation;
  if (c.model.patience > 0) {
    const auto test_cells = load_cells(c, b, manifest, split.cells.source_test);
    const auto raw = labeled_windows(test_cells, w);
    validation = scaled<data::WindowSample>(scaler, raw);
  }

  // Target cells contribute inputs only (adapted) or pre-cutoff labels only
  // (finetune); target_windows never attaches a post-cutoff label.
  auto target_split = [&] {
    data::TargetWindows all;
    for (const auto& t : load_cells(c, b, manifest, split.cells.target)) {
      auto tw = data::target_windows(t, w, c.split.cutoff_kah);
      std::move(tw.labeled.begin(), tw.labeled.end(), std::back_inserter(all.labeled));
      std::move(tw.unlabeled.begin(), tw.unlabeled.end(), std::back_inserter(all.unlabeled));
    }
    return all;
  };

  bundle::Checkpoint ck;
  ck.variant = to_string(variant);
  ck.scaler = scaler;
  ck.config_hash = config::config_hash(c);
  std::vector<nn::EpochRecord> history;

  switch (variant) {
    case Variant::baseline: {
      auto tr = train_source_only(c, source, validation);
      ck.model = std::move(tr.model);
      history = std::move(tr.history);
      break;
    }
    case Variant::finetune: {
      nn::ModelParams base;
      if (bundle::fs::exists(b.checkpoint("baseline"))) {
        base = load_checkpoint(c, b, Variant::baseline).model;
      } else {
        base = cmd_train(c, b, Variant::baseline).model;
      }
      const auto tw = target_split();
      if (tw.labeled.empty()) throw DataError("finetune: no target windows before the cutoff");
      const auto labeled = scaled<data::WindowSample>(scaler, tw.labeled);
      auto tr = adapt::fine_tune_dense(std::move(base), labeled, config::finetune_config(c), stage_seed(c, "finetune"));
      ck.model = std::move(tr.model);
      history = std::move(tr.history);
      break;
    }
    case Variant::adapted: {
      double lambda = 0.0;
      if (c.adapt.lambda) {
        lambda = *c.adapt.lambda;
      } else {
        lambda = bundle::fs::exists(b.lobo_json()) ? bundle::parse_lobo_lambda(b.read_text(b.lobo_json()))
                                                   : cmd_tune(c, b).lambda_star;
      }
      const auto tw = target_split();
      const auto target = scaled<data::UnlabeledWindow>(scaler, tw.unlabeled);
      auto tr = adapt::train_adapted(source, target, lambda, config::adapt_config(c), stage_seed(c, "train"), validation);
      ck.model = std::move(tr.model);
      ck.lambda = lambda;
      history = std::move(tr.history);
      break;
    }
  }

  bundle::write_text(b.checkpoint(ck.variant), bundle::checkpoint_json(ck));
  bundle::write_text(b.history(ck.variant), bundle::history_csv(history));
  write_resolved_beside(c, b.checkpoint(ck.variant).parent_path());
  return ck;
}

namespace {

std::vector<data::WindowSample> calibration_windows(const config::RunConfig& c, const bundle::Bundle& b,
                                                    const bundle::Manifest& manifest, const bundle::SplitFile& split) {
  const auto cells = load_cells(c, b, manifest, split.cells.calibration);
  return labeled_windows(cells, c.model.window);
}

bundle::CalibrationFile calibrate(const std::string& variant, const conformal::Predictor& predictor,
                                  std::span<const data::WindowSample> calibration, double alpha) {
  const auto scores = conformal::nonconformity_scores(predictor, calibration);
  const auto e = conformal::epsilon_hat(scores, alpha);
  return {variant, alpha, scores.q(), e.p, e.value, e.infinite};
}

std::string forecast_file(const CellForecast& f) {
  std::vector<std::optional<double>> truths(f.truth.begin(), f.truth.end());
  return bundle::forecast_csv(f.throughput_kah, truths, f.forecast);
}

}  // namespace

bundle::CalibrationFile cmd_calibrate(const config::RunConfig& c, const bundle::Bundle& b, Variant variant) {
  config::validate(c);
  const auto split = load_split(b);
  check_bundle_matches(c, split);
  const auto manifest = load_manifest(b);
  const auto ck = load_checkpoint(c, b, variant);
  const auto cal = calibrate(to_string(variant), conformal::model_predictor(ck.model, ck.scaler),
                             calibration_windows(c, b, manifest, split), c.conformal.alpha);
  bundle::write_text(b.calibration(cal.variant), bundle::calibration_json(cal));
  write_resolved_beside(c, b.calibration(cal.variant).parent_path());
  return cal;
}

std::vector<CellForecast> rollout_cells(const conformal::Predictor& predictor,
                                        std::span<const sim::SohTrajectory> cells, std::size_t window,
                                        double cutoff_kah, double eps_hat) {
  std::vector<CellForecast> out;
  for (const auto& t : cells) {
    const auto c = cutoff_index(t, cutoff_kah);
    if (!c || *c + 1 < window || *c + 1 >= t.samples.size()) continue;
    std::vector<data::Step> seed;
    for (std::size_t k = *c + 1 - window; k <= *c; ++k) seed.push_back(data::to_step(t.samples[k]));
    std::vector<conformal::Rates> rates;
    for (std::size_t k = *c + 1; k < t.samples.size(); ++k)
      rates.push_back({t.samples[k].c_rate_dis, t.samples[k].c_rate_ch});
    const std::size_t steps = t.samples.size() - *c - 1;
    CellForecast f;
    f.cell_id = t.cell_id;
    f.forecast = conformal::rollout_forecast(predictor, std::move(seed), rates, steps, eps_hat);
    for (std::size_t k = *c + 1; k < t.samples.size(); ++k) {
      f.throughput_kah.push_back(t.samples[k].throughput_kah);
      f.truth.push_back(t.samples[k].soh);
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<EvalRow> evaluate_predictor(const std::string& variant, const conformal::Predictor& predictor,
                                        const EvalData& data, std::vector<CellForecast>* target_forecasts) {
  const auto cal = calibrate(variant, predictor, data.calibration, data.alpha);
  const double eps = cal.eps_hat;

  auto score = [&](const std::string& domain, std::span<const sim::SohTrajectory> cells,
                   std::vector<CellForecast>* keep) {
    EvalRow row;
    row.variant = variant;
    row.domain = domain;
    row.eps_hat_pct = 100.0 * eps;
    row.mean_width_pct = 200.0 * eps;

    auto forecasts = rollout_cells(predictor, cells, data.window, data.cutoff_kah, eps);
    if (forecasts.empty()) throw DataError("evaluate: no " + domain + " cell extends past the cutoff");
    std::vector<double> preds;
    std::vector<double> truths;
    std::vector<conformal::PredictionInterval> intervals;
    for (const auto& f : forecasts) {
      preds.insert(preds.end(), f.forecast.point.begin(), f.forecast.point.end());
      truths.insert(truths.end(), f.truth.begin(), f.truth.end());
      intervals.insert(intervals.end(), f.forecast.intervals.begin(), f.forecast.intervals.end());
      if (f.forecast.diverged) ++row.diverged_cells;
    }
    row.points = preds.size();
    row.rmse_pct = metric_rmse(preds, truths);
    row.r2 = metric_r2(preds, truths);
    row.coverage_rollout = conformal::empirical_coverage(intervals, truths);

    // Teacher-forced one-step coverage over the same post-cutoff labels.
    std::vector<std::vector<data::Step>> windows;
    std::vector<double> labels;
    for (const auto& t : cells) {
      const auto c = cutoff_index(t, data.cutoff_kah);
      if (!c) continue;
      for (auto& s : data::window_trajectory(t, data.window).samples) {
        if (s.step_index <= *c) continue;
        windows.push_back(std::move(s.window));
        labels.push_back(s.label);
      }
    }
    const auto one_step = predictor(windows);
    std::vector<conformal::PredictionInterval> single;
    for (double y : one_step) single.push_back(conformal::make_interval(y, eps));
    row.coverage_single_step = conformal::empirical_coverage(single, labels);

    if (keep) *keep = std::move(forecasts);
    return row;
  };

  std::vector<EvalRow> rows;
  rows.push_back(score("source", data.source_test, nullptr));
  rows.push_back(score("target", data.target, target_forecasts));
  return rows;
}

const EvalRow& EvalReport::row(const std::string& variant, const std::string& domain) const {
  for (const auto& r : rows)
    if (r.variant == variant && r.domain == domain) return r;
  throw ContractError("report has no row " + variant + "/" + domain);
}

std::string report_csv(const EvalReport& r) {
  std::string out =
      "variant,domain,rmse_pct,r2,coverage_rollout,coverage_single_step,mean_width_pct,eps_hat_pct,points,"
      "diverged_cells,lambda,lambda_source\n";
  for (const auto& row : r.rows) {
    out += row.variant + ',' + row.domain + ',' + fmt(row.rmse_pct) + ',' + fmt(row.r2) + ',' +
           fmt(row.coverage_rollout) + ',' + fmt(row.coverage_single_step) + ',' + fmt(row.mean_width_pct) + ',' +
           fmt(row.eps_hat_pct) + ',' + std::to_string(row.points) + ',' + std::to_string(row.diverged_cells) + ',' +
           (r.lambda ? fmt(*r.lambda) : std::string()) + ',' + r.lambda_source + '\n';
  }
  return out;
}

void cmd_forecast(const config::RunConfig& c, const bundle::Bundle& b, Variant variant) {
  config::validate(c);
  const auto split = load_split(b);
  check_bundle_matches(c, split);
  const auto manifest = load_manifest(b);
  const auto ck = load_checkpoint(c, b, variant);
  const auto predictor = conformal::model_predictor(ck.model, ck.scaler);
  const std::string name = to_string(variant);
  double eps = 0.0;
  if (bundle::fs::exists(b.calibration(name))) {
    eps = bundle::parse_calibration(b.read_text(b.calibration(name))).eps_hat;
  } else {
    eps = cmd_calibrate(c, b, variant).eps_hat;
  }
  const auto target = load_cells(c, b, manifest, split.cells.target);
  for (const auto& f : rollout_cells(predictor, target, c.model.window, c.split.cutoff_kah, eps))
    bundle::write_text(b.forecast(name, f.cell_id), forecast_file(f));
  write_resolved_beside(c, b.forecast(name, "x").parent_path());
}

EvalReport cmd_evaluate(const config::RunConfig& c, const bundle::Bundle& b) {
  config::validate(c);
  const auto split = load_split(b);
  check_bundle_matches(c, split);
  const auto manifest = load_manifest(b);

  std::vector<bundle::Checkpoint> checkpoints;
  for (auto v : kAllVariants) checkpoints.push_back(load_checkpoint(c, b, v));

  EvalData data;
  data.source_test = load_cells(c, b, manifest, split.cells.source_test);
  data.target = load_cells(c, b, manifest, split.cells.target);
  data.calibration = calibration_windows(c, b, manifest, split);
  data.window = c.model.window;
  data.cutoff_kah = c.split.cutoff_kah;
  data.alpha = c.conformal.alpha;
  if (data.source_test.empty()) throw DataError("evaluate: no held-out source cells (split.test_per_batch = 0)");

  EvalReport report;
  report.lambda = checkpoints.back().lambda;
  report.lambda_source = c.adapt.lambda ? "config" : "lobo";
  std::string coverage = "variant,domain,alpha,eps_hat_pct,coverage_single_step,coverage_rollout,mean_width_pct\n";

  for (const auto& ck : checkpoints) {
    const auto predictor = conformal::model_predictor(ck.model, ck.scaler);
    std::vector<CellForecast> forecasts;
    const auto rows = evaluate_predictor(ck.variant, predictor, data, &forecasts);
    const auto cal = calibrate(ck.variant, predictor, data.calibration, data.alpha);
    bundle::write_text(b.calibration(ck.variant), bundle::calibration_json(cal));

    std::string scatter = "cell_id,throughput_kAh,soh_true,soh_pred\n";
    for (const auto& f : forecasts) {
      bundle::write_text(b.forecast(ck.variant, f.cell_id), forecast_file(f));
      for (std::size_t k = 0; k < f.truth.size(); ++k)
        scatter += f.cell_id + ',' + fmt(f.throughput_kah[k]) + ',' + fmt(f.truth[k]) + ',' + fmt(f.forecast.point[k]) + '\n';
    }
    bundle::write_text(b.scatter_csv(ck.variant), scatter);
    for (const auto& r : rows) {
      coverage += r.variant + ',' + r.domain + ',' + fmt(data.alpha) + ',' + fmt(r.eps_hat_pct) + ',' +
                  fmt(r.coverage_single_step) + ',' + fmt(r.coverage_rollout) + ',' + fmt(r.mean_width_pct) + '\n';
    }
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }

  bundle::write_text(b.report_csv(), report_csv(report));
  bundle::write_text(b.coverage_csv(), coverage);
  write_resolved_beside(c, b.report_csv().parent_path());
  return report;
}

void cmd_export_plot(const config::RunConfig& c, const bundle::Bundle& b) {
  config::validate(c);
  const auto split = load_split(b);
  const auto manifest = load_manifest(b);
  const auto dir = b.plot_dir();

  std::map<std::string, std::string> role;
  for (const auto& id : split.cells.source_train) role[id] = "source_train";
  for (const auto& id : split.cells.source_test) role[id] = "source_test";
  for (const auto& id : split.cells.calibration) role[id] = "calibration";
  for (const auto& id : split.cells.target) role[id] = "target";

  std::vector<std::string> ids;
  for (const auto& e : manifest.cells) ids.push_back(e.cell_id);
  std::string traj = "cell_id,batch,role,throughput_kAh,soh\n";
  for (const auto& t : load_cells(c, b, manifest, ids)) {
    for (const auto& s : t.samples)
      traj += t.cell_id + ',' + sim::to_string(t.batch) + ',' + role[t.cell_id] + ',' + fmt(s.throughput_kah) + ',' +
              fmt(s.soh) + '\n';
  }
  bundle::write_text(dir / "trajectories.csv", traj);

  // Per-variant tables are concatenated with a leading key column.
  auto prefixed = [&](const bundle::fs::path& path, const std::string& key, bool with_header, std::string& out) {
    std::istringstream in(b.read_text(path));
    std::string line;
    std::getline(in, line);
    if (with_header) out += "variant," + line + '\n';
    while (std::getline(in, line))
      if (!line.empty()) out += key + ',' + line + '\n';
  };

  std::string history;
  std::string forecast;
  bool first_history = true;
  bool first_forecast = true;
  for (auto v : kAllVariants) {
    const std::string name = to_string(v);
    if (bundle::fs::exists(b.history(name))) {
      prefixed(b.history(name), name, first_history, history);
      first_history = false;
    }
    for (const auto& id : split.cells.target) {
      const auto path = b.forecast(name, id);
      if (!bundle::fs::exists(path)) continue;
      if (first_forecast) forecast = "variant,cell_id,step,throughput_kAh,soh_true,soh_pred,lower,upper\n";
      first_forecast = false;
      prefixed(path, name + ',' + id, false, forecast);
    }
  }
  if (!history.empty()) bundle::write_text(dir / "history.csv", history);
  if (!forecast.empty()) bundle::write_text(dir / "forecast.csv", forecast);
  if (bundle::fs::exists(b.lobo_csv())) bundle::write_text(dir / "lobo.csv", b.read_text(b.lobo_csv()));
  write_resolved_beside(c, dir);
}

}  // namespace sohtl::pipeline
