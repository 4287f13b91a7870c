// Command-line driver for the SOH transfer-learning pipeline.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sohtl/sohtl.h"

namespace {

int exit_code(sohtl_status s) {
  switch (s) {
    case SOHTL_OK: return 0;
    case SOHTL_ERR_CONTRACT:
    case SOHTL_ERR_CONFIG: return 2;
    case SOHTL_ERR_DATA: return 3;
    case SOHTL_ERR_NUMERIC: return 4;
    default: return 1;
  }
}

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  std::string out;
  std::vector<std::string> sets;
  std::string mode = "all";
};

struct Closer {
  void operator()(sohtl_pipeline* p) const { sohtl_pipeline_close(p); }
};
using Handle = std::unique_ptr<sohtl_pipeline, Closer>;

// Throws the status so that main() has a single exit path.
struct Failure {
  sohtl_status status;
};

void check(sohtl_status s, const char* stage) {
  if (s != SOHTL_OK) {
    std::cerr << "sohtl " << stage << ": " << sohtl_last_error() << "\n";
    throw Failure{s};
  }
}

Handle open(const Options& o, const CLI::App& app) {
  sohtl_pipeline* raw = nullptr;
  check(sohtl_pipeline_open(o.config.empty() ? nullptr : o.config.c_str(), &raw), "config");
  Handle h(raw);
  for (const auto& s : o.sets) check(sohtl_pipeline_set(h.get(), s.c_str()), "--set");
  if (app.count("--seed") > 0) check(sohtl_pipeline_set_seed(h.get(), o.seed), "--seed");
  if (app.count("--jobs") > 0) check(sohtl_pipeline_set_jobs(h.get(), o.jobs), "--jobs");
  if (!o.out.empty()) check(sohtl_pipeline_set_output(h.get(), o.out.c_str()), "--out");
  return h;
}

const char* variant_arg(const Options& o) { return o.mode == "all" ? nullptr : o.mode.c_str(); }

std::string output_dir(sohtl_pipeline* p) {
  std::size_t needed = 0;
  check(sohtl_pipeline_config_json(p, nullptr, 0, &needed), "config");
  std::string buf(needed, '\0');
  check(sohtl_pipeline_config_json(p, buf.data(), buf.size(), &needed), "config");
  buf.pop_back();
  return nlohmann::json::parse(buf).at("paths").at("output").get<std::string>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery SOH forecasting with MMD transfer learning and conformal intervals"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed (overrides the config)");
  app.add_option("-j,--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("-o,--out", o.out, "Run directory (overrides paths.output)");
  app.add_option("--set", o.sets, "Override a config field, e.g. --set model.epochs=20");

  auto* generate = app.add_subcommand("generate", "Simulate cells and write the dataset bundle");
  auto* train = app.add_subcommand("train", "Train model variants");
  auto* tune = app.add_subcommand("tune", "Leave-one-batch-out selection of the MMD weight");
  auto* calibrate = app.add_subcommand("calibrate", "Conformal half-width from calibration cells");
  auto* forecast = app.add_subcommand("forecast", "Closed-loop forecasts for target cells");
  auto* evaluate = app.add_subcommand("evaluate", "Score every variant and write the report");
  auto* plot = app.add_subcommand("export-plot", "Write CSV tables for plotting");
  const std::vector<std::string> modes = {"all", "baseline", "finetune", "adapted"};
  for (auto* sub : {train, calibrate, forecast})
    sub->add_option("-m,--mode", o.mode, "Model variant")->check(CLI::IsMember(modes));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Handle h = open(o, app);
    sohtl_pipeline* p = h.get();
    if (generate->parsed()) {
      check(sohtl_generate(p), "generate");
    } else if (train->parsed()) {
      if (o.mode == "all") {
        for (const char* v : {"baseline", "finetune", "adapted"}) check(sohtl_train(p, v), "train");
      } else {
        check(sohtl_train(p, o.mode.c_str()), "train");
      }
    } else if (tune->parsed()) {
      double lambda = 0.0;
      check(sohtl_tune(p, &lambda), "tune");
      std::cout << "lambda* = " << lambda << "\n";
    } else if (calibrate->parsed()) {
      double eps = 0.0;
      if (o.mode == "all") {
        for (const char* v : {"baseline", "finetune", "adapted"}) {
          check(sohtl_calibrate(p, v, &eps), "calibrate");
          std::cout << v << ": eps_hat = " << 100.0 * eps << " % SOH\n";
        }
      } else {
        check(sohtl_calibrate(p, o.mode.c_str(), &eps), "calibrate");
        std::cout << o.mode << ": eps_hat = " << 100.0 * eps << " % SOH\n";
      }
    } else if (forecast->parsed()) {
      check(sohtl_forecast(p, variant_arg(o)), "forecast");
    } else if (evaluate->parsed()) {
      check(sohtl_evaluate(p), "evaluate");
      std::ifstream in(output_dir(p) + "/eval/report.csv");
      std::cout << in.rdbuf();
    } else if (plot->parsed()) {
      check(sohtl_export_plot(p), "export-plot");
    }
  } catch (const Failure& f) {
    return exit_code(f.status);
  }
  return 0;
}
