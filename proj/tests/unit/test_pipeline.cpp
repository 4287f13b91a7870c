#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sohtl/bundle.hpp"
#include "sohtl/config.hpp"
#include "sohtl/error.hpp"
#include "sohtl/metrics.hpp"
#include "sohtl/pipeline.hpp"

using namespace sohtl;
namespace fs = std::filesystem;

namespace {

config::RunConfig small_config(const fs::path& out) {
  return config::with_overrides(
      config::RunConfig{},
      {"seed=5", "paths.output=" + out.string(), "simulator.cells_per_source_batch=3", "simulator.target_cells=2",
       "simulator.total_throughput_kah=30", "conformal.calib_per_batch=2", "split.test_per_batch=1",
       "split.cutoff_kah=10", "model.window=5", "model.hidden=4", "model.epochs=2", "model.batch_size=16",
       "adapt.grid=[0,0.5]", "adapt.tune_epochs=1", "finetune.epochs=3"});
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sohtl_pipe_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// Replaces the SOH column of selected rows with "nan".
void poison_rows(const fs::path& csv, const std::function<bool(double kah)>& pick) {
  std::istringstream in(slurp(csv));
  std::string line, out;
  std::getline(in, line);
  out = line + "\n";
  while (std::getline(in, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (pick(std::stod(line.substr(0, c1)))) line = line.substr(0, c1) + ",nan" + line.substr(c2);
    out += line + "\n";
  }
  bundle::write_text(csv, out);
}

struct Run {
  config::RunConfig config;
  std::shared_ptr<bundle::AccessLog> log = std::make_shared<bundle::AccessLog>();
  bundle::Bundle bundle;

  explicit Run(const std::string& name) : config(small_config(scratch(name))), bundle(config.output, log) {}
};

conformal::Predictor constant(double v) {
  return [v](std::span<const std::vector<data::Step>> ws) { return std::vector<double>(ws.size(), v); };
}

}  // namespace

TEST_CASE("generate") {
  Run r("generate");
  pipeline::cmd_generate(r.config, r.bundle);
  const auto m = pipeline::load_manifest(r.bundle);
  CHECK(m.cells.size() == 3 * (3 + 2 + 1) + 2);
  std::size_t target = 0;
  for (const auto& c : m.cells) {
    CHECK(fs::exists(r.bundle.cell_csv(c.cell_id)));
    target += c.batch == sim::Batch::B2 ? 1 : 0;
  }
  CHECK(target == 2);
  const auto split = pipeline::load_split(r.bundle);
  CHECK(split.cells.calibration.size() == 6);
  CHECK(split.cells.source_test.size() == 3);
  CHECK(split.cells.source_train.size() == 9);
  CHECK(split.window == 5);

  const auto first = tree(r.config.output);
  pipeline::cmd_generate(r.config, r.bundle);
  CHECK(tree(r.config.output) == first);

  SUBCASE("one cell per batch") {
    // Calibration and test cells are simulated on top of the training cells,
    // so the smallest bundle has one of each per source batch.
    auto c = config::with_overrides(r.config, {"simulator.cells_per_source_batch=1", "simulator.target_cells=1", "conformal.calib_per_batch=1",
                                               "split.test_per_batch=0",
                                               "simulator.total_throughput_kah=5", "model.window=2",
                                               "split.cutoff_kah=2"});
    const auto dir = scratch("generate_one");
    c.output = dir.string();
    pipeline::cmd_generate(c, bundle::Bundle(dir));
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "data" / "cells")) files += e.is_regular_file() ? 1 : 0;
    CHECK(files == 3 * 2 + 1);
    CHECK(fs::exists(dir / "data" / "manifest.json"));
  }
}

TEST_CASE("train, tune and evaluate on a small bundle") {
  Run r("full");
  pipeline::cmd_generate(r.config, r.bundle);
  const auto split = pipeline::load_split(r.bundle);
  std::set<std::string> allowed;
  for (const auto& id : split.cells.source_train) allowed.insert(r.bundle.cell_csv(id).lexically_normal().string());
  for (const auto& p : {r.bundle.manifest(), r.bundle.split()}) allowed.insert(p.lexically_normal().string());

  r.log->clear();
  const auto lobo = pipeline::cmd_tune(r.config, r.bundle);
  CHECK(lobo.grid.size() == 2);
  CHECK(fs::exists(r.bundle.lobo_csv()));
  for (const auto& path : r.log->reads()) {
    INFO(path);
    CHECK(allowed.contains(path));
  }
  CHECK(lobo == pipeline::cmd_tune(r.config, r.bundle));

  SUBCASE("missing checkpoint is named") {
    try {
      pipeline::cmd_evaluate(r.config, r.bundle);
      FAIL("expected a missing-checkpoint error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("baseline") != std::string::npos);
    }
  }

  SUBCASE("training reads no calibration cell") {
    std::set<std::string> calib;
    for (const auto& id : split.cells.calibration) calib.insert(r.bundle.cell_csv(id).lexically_normal().string());
    r.log->clear();
    for (auto v : {pipeline::Variant::baseline, pipeline::Variant::finetune, pipeline::Variant::adapted})
      pipeline::cmd_train(r.config, r.bundle, v);
    for (const auto& path : r.log->reads()) CHECK_FALSE(calib.contains(path));

    const auto report = pipeline::cmd_evaluate(r.config, r.bundle);
    CHECK(report.rows.size() == 6);
    for (const auto& row : report.rows) {
      CHECK(std::isfinite(row.rmse_pct));
      CHECK(row.coverage_single_step >= 0.0);
      CHECK(row.coverage_single_step <= 1.0);
    }
    CHECK(fs::exists(r.bundle.report_csv()));
    CHECK(fs::exists(r.bundle.coverage_csv()));
    for (const auto& id : split.cells.target) CHECK(fs::exists(r.bundle.root() / "forecast" / "adapted" / (id + ".csv")));

    pipeline::cmd_export_plot(r.config, r.bundle);
    CHECK(fs::exists(r.bundle.plot_dir() / "trajectories.csv"));
    CHECK(fs::exists(r.bundle.plot_dir() / "lobo.csv"));
  }

  SUBCASE("adapted with lambda 0 equals the baseline") {
    const auto c0 = config::with_overrides(r.config, {"adapt.lambda=0"});
    const auto base = pipeline::cmd_train(c0, r.bundle, pipeline::Variant::baseline);
    const auto adapted = pipeline::cmd_train(c0, r.bundle, pipeline::Variant::adapted);
    CHECK(base.model == adapted.model);
    const auto hist = slurp(r.bundle.history("baseline"));
    CHECK(hist.substr(0, hist.find('\n')) == "epoch,L_source,MMD2,L_total");
  }

  SUBCASE("lambda from the tuner") {
    const auto c = config::with_overrides(r.config, {"adapt.lambda=lobo"});
    const auto ck = pipeline::cmd_train(c, r.bundle, pipeline::Variant::adapted);
    REQUIRE(ck.lambda.has_value());
    CHECK(*ck.lambda == lobo.lambda_star);
  }

  SUBCASE("mismatched run settings are rejected") {
    const auto c = config::with_overrides(r.config, {"model.window=6"});
    CHECK_THROWS_AS(pipeline::cmd_train(c, r.bundle, pipeline::Variant::baseline), ConfigError);
  }
}

TEST_CASE("withheld target labels and calibration cells do not reach training") {
  Run clean("fw_clean");
  Run dirty("fw_dirty");
  dirty.config = config::with_overrides(clean.config, {"paths.output=" + dirty.config.output});
  pipeline::cmd_generate(clean.config, clean.bundle);
  pipeline::cmd_generate(dirty.config, dirty.bundle);

  const auto split = pipeline::load_split(dirty.bundle);
  const auto manifest = pipeline::load_manifest(dirty.bundle);
  // The final SOH of each target cell is a label and never an input.
  for (const auto& id : split.cells.target) {
    const auto cells = pipeline::load_cells(dirty.config, dirty.bundle, manifest, {id});
    const double last = cells.front().samples.back().throughput_kah;
    poison_rows(dirty.bundle.cell_csv(id), [last](double kah) { return kah >= last; });
  }
  for (const auto& id : split.cells.calibration)
    poison_rows(dirty.bundle.cell_csv(id), [](double) { return true; });

  CHECK(pipeline::cmd_tune(clean.config, clean.bundle) == pipeline::cmd_tune(dirty.config, dirty.bundle));
  for (auto v : {pipeline::Variant::baseline, pipeline::Variant::finetune, pipeline::Variant::adapted}) {
    const auto a = pipeline::cmd_train(clean.config, clean.bundle, v);
    const auto b = pipeline::cmd_train(dirty.config, dirty.bundle, v);
    CHECK(a.model == b.model);
  }
  // Calibration does read the poisoned cells and must refuse them.
  CHECK_THROWS(pipeline::cmd_calibrate(dirty.config, dirty.bundle, pipeline::Variant::baseline));
}

TEST_CASE("scoring with test doubles") {
  Run r("doubles");
  pipeline::cmd_generate(r.config, r.bundle);
  const auto split = pipeline::load_split(r.bundle);
  const auto manifest = pipeline::load_manifest(r.bundle);

  pipeline::EvalData d;
  d.source_test = pipeline::load_cells(r.config, r.bundle, manifest, split.cells.source_test);
  d.target = pipeline::load_cells(r.config, r.bundle, manifest, split.cells.target);
  d.window = r.config.model.window;
  d.cutoff_kah = r.config.split.cutoff_kah;
  d.alpha = 0.1;
  for (const auto& t : pipeline::load_cells(r.config, r.bundle, manifest, split.cells.calibration)) {
    auto ws = data::window_trajectory(t, d.window).samples;
    d.calibration.insert(d.calibration.end(), ws.begin(), ws.end());
  }

  SUBCASE("perfect oracle") {
    // Looks the next SOH up from the exact window contents.
    std::map<std::vector<double>, double> next;
    const auto add = [&](const sim::SohTrajectory& t) {
      for (const auto& s : data::window_trajectory(t, d.window).samples) {
        std::vector<double> key;
        for (const auto& step : s.window) key.insert(key.end(), step.begin(), step.end());
        next[key] = s.label;
      }
    };
    for (const auto& t : d.source_test) add(t);
    for (const auto& t : d.target) add(t);
    for (const auto& t : pipeline::load_cells(r.config, r.bundle, manifest, split.cells.calibration)) add(t);
    conformal::Predictor oracle = [&next](std::span<const std::vector<data::Step>> ws) {
      std::vector<double> out;
      for (const auto& w : ws) {
        std::vector<double> key;
        for (const auto& step : w) key.insert(key.end(), step.begin(), step.end());
        out.push_back(next.at(key));
      }
      return out;
    };
    for (const auto& row : pipeline::evaluate_predictor("oracle", oracle, d)) {
      CHECK(row.rmse_pct == 0.0);
      CHECK(row.r2 == 1.0);
      CHECK(row.coverage_rollout == 1.0);
      CHECK(row.coverage_single_step == 1.0);
      CHECK(row.diverged_cells == 0);
    }
  }
  SUBCASE("constant prediction") {
    for (const auto& row : pipeline::evaluate_predictor("constant", constant(0.97), d)) CHECK(row.r2 <= 0.0);
  }
}

TEST_CASE("metrics") {
  const std::vector<double> truths{1, 2, 3};
  CHECK(metric_rmse(truths, truths) == 0.0);
  CHECK(metric_r2(truths, truths) == 1.0);
  const std::vector<double> zeros{0, 0, 0};
  CHECK(metric_rmse(zeros, truths) == doctest::Approx(100.0 * std::sqrt(14.0 / 3.0)));
  CHECK(metric_r2(zeros, truths) == doctest::Approx(-6.0));
  const std::vector<double> mean{2, 2, 2};
  CHECK(metric_r2(mean, truths) == 0.0);
  CHECK_THROWS_AS(metric_r2(truths, mean), DataError);
  CHECK_THROWS_AS(metric_rmse(std::vector<double>{}, std::vector<double>{}), ContractError);
}

TEST_CASE("variant names") {
  CHECK(pipeline::parse_variant("finetune") == pipeline::Variant::finetune);
  CHECK(pipeline::to_string(pipeline::Variant::adapted) == "adapted");
  CHECK_THROWS_AS(pipeline::parse_variant("other"), ConfigError);
}

#ifdef SOHTL_CLI_PATH
TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  const std::string cli = SOHTL_CLI_PATH;
  const auto run = [&](const std::string& args) {
    const int rc = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("bogus") == 2);
  CHECK(run("--set model.hiden=3 generate") == 2);
  CHECK(run("-o " + (dir / "empty").string() + " evaluate") == 3);

  bundle::write_text(dir / "bad.json", R"({"seed": "x"})");
  CHECK(run("-c " + (dir / "bad.json").string() + " generate") == 2);

  const std::string small = "-o " + (dir / "run").string() +
                            " --set simulator.cells_per_source_batch=3 --set simulator.target_cells=2"
                            " --set simulator.total_throughput_kah=30 --set conformal.calib_per_batch=2"
                            " --set split.test_per_batch=1 --set split.cutoff_kah=10 --set model.window=5"
                            " --set model.hidden=4 --set model.epochs=1 --set finetune.epochs=1";
  CHECK(run(small + " generate") == 0);
  CHECK(run(small + " train -m baseline") == 0);
  CHECK(run(small + " calibrate -m baseline") == 0);
  CHECK(run(small + " train -m nope") == 2);
}
#endif
