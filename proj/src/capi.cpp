#include "sohtl/sohtl.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "sohtl/bundle.hpp"
#include "sohtl/config.hpp"
#include "sohtl/conformal.hpp"
#include "sohtl/error.hpp"
#include "sohtl/metrics.hpp"
#include "sohtl/pipeline.hpp"

struct sohtl_pipeline {
  sohtl::config::RunConfig config;
};

namespace {

thread_local std::string g_last_error;

sohtl_status code_of(sohtl::ErrorKind kind) {
  switch (kind) {
    case sohtl::ErrorKind::contract: return SOHTL_ERR_CONTRACT;
    case sohtl::ErrorKind::config: return SOHTL_ERR_CONFIG;
    case sohtl::ErrorKind::data: return SOHTL_ERR_DATA;
    case sohtl::ErrorKind::numeric: return SOHTL_ERR_NUMERIC;
  }
  return SOHTL_ERR_INTERNAL;
}

template <class F>
sohtl_status guard(F&& f) {
  try {
    g_last_error.clear();
    f();
    return SOHTL_OK;
  } catch (const sohtl::Error& e) {
    g_last_error = e.what();
    return code_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return SOHTL_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SOHTL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SOHTL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return SOHTL_ERR_INTERNAL;
  }
}

void need(const void* ptr, const char* what) {
  if (ptr == nullptr) throw sohtl::ContractError(std::string(what) + " must not be NULL");
}

sohtl::bundle::Bundle bundle_of(const sohtl_pipeline* p) { return sohtl::bundle::Bundle(p->config.output); }

template <class F>
void for_variants(const char* variant, F&& f) {
  if (variant == nullptr) {
    for (auto v : sohtl::pipeline::kAllVariants) f(v);
  } else {
    f(sohtl::pipeline::parse_variant(variant));
  }
}

}  // namespace

extern "C" {

const char* sohtl_last_error(void) { return g_last_error.c_str(); }

sohtl_status sohtl_pipeline_open(const char* config_path, sohtl_pipeline** out) {
  return guard([&] {
    need(out, "out");
    *out = nullptr;
    auto p = std::make_unique<sohtl_pipeline>();
    if (config_path != nullptr) p->config = sohtl::config::load(config_path);
    *out = p.release();
  });
}

void sohtl_pipeline_close(sohtl_pipeline* p) { delete p; }

sohtl_status sohtl_pipeline_set(sohtl_pipeline* p, const char* assignment) {
  return guard([&] {
    need(p, "pipeline");
    need(assignment, "assignment");
    p->config = sohtl::config::with_overrides(p->config, {assignment});
  });
}

sohtl_status sohtl_pipeline_set_seed(sohtl_pipeline* p, uint64_t seed) {
  return guard([&] {
    need(p, "pipeline");
    p->config.seed = seed;
  });
}

sohtl_status sohtl_pipeline_set_jobs(sohtl_pipeline* p, size_t jobs) {
  return guard([&] {
    need(p, "pipeline");
    if (jobs == 0) throw sohtl::ConfigError("jobs: must be at least 1");
    p->config.jobs = jobs;
  });
}

sohtl_status sohtl_pipeline_set_output(sohtl_pipeline* p, const char* dir) {
  return guard([&] {
    need(p, "pipeline");
    need(dir, "dir");
    if (*dir == '\0') throw sohtl::ConfigError("paths.output: must not be empty");
    p->config.output = dir;
  });
}

sohtl_status sohtl_pipeline_config_json(const sohtl_pipeline* p, char* buf, size_t size, size_t* needed) {
  return guard([&] {
    need(p, "pipeline");
    const std::string text = sohtl::config::to_json(p->config);
    if (needed != nullptr) *needed = text.size() + 1;
    if (buf == nullptr || size < text.size() + 1) {
      if (buf == nullptr && needed != nullptr) return;
      throw sohtl::ContractError("buffer too small for config JSON");
    }
    std::memcpy(buf, text.c_str(), text.size() + 1);
  });
}

sohtl_status sohtl_generate(sohtl_pipeline* p) {
  return guard([&] {
    need(p, "pipeline");
    sohtl::pipeline::cmd_generate(p->config, bundle_of(p));
  });
}

sohtl_status sohtl_train(sohtl_pipeline* p, const char* variant) {
  return guard([&] {
    need(p, "pipeline");
    const auto b = bundle_of(p);
    for_variants(variant, [&](auto v) { sohtl::pipeline::cmd_train(p->config, b, v); });
  });
}

sohtl_status sohtl_tune(sohtl_pipeline* p, double* lambda_star) {
  return guard([&] {
    need(p, "pipeline");
    const auto r = sohtl::pipeline::cmd_tune(p->config, bundle_of(p));
    if (lambda_star != nullptr) *lambda_star = r.lambda_star;
  });
}

sohtl_status sohtl_calibrate(sohtl_pipeline* p, const char* variant, double* eps_hat) {
  return guard([&] {
    need(p, "pipeline");
    const auto b = bundle_of(p);
    for_variants(variant, [&](auto v) {
      const auto c = sohtl::pipeline::cmd_calibrate(p->config, b, v);
      if (eps_hat != nullptr) *eps_hat = c.eps_hat;
    });
  });
}

sohtl_status sohtl_forecast(sohtl_pipeline* p, const char* variant) {
  return guard([&] {
    need(p, "pipeline");
    const auto b = bundle_of(p);
    for_variants(variant, [&](auto v) { sohtl::pipeline::cmd_forecast(p->config, b, v); });
  });
}

sohtl_status sohtl_evaluate(sohtl_pipeline* p) {
  return guard([&] {
    need(p, "pipeline");
    sohtl::pipeline::cmd_evaluate(p->config, bundle_of(p));
  });
}

sohtl_status sohtl_export_plot(sohtl_pipeline* p) {
  return guard([&] {
    need(p, "pipeline");
    sohtl::pipeline::cmd_export_plot(p->config, bundle_of(p));
  });
}

sohtl_status sohtl_metric_rmse(const double* preds, const double* truths, size_t n, double* out) {
  return guard([&] {
    need(preds, "preds");
    need(truths, "truths");
    need(out, "out");
    *out = sohtl::metric_rmse({preds, n}, {truths, n});
  });
}

sohtl_status sohtl_metric_r2(const double* preds, const double* truths, size_t n, double* out) {
  return guard([&] {
    need(preds, "preds");
    need(truths, "truths");
    need(out, "out");
    *out = sohtl::metric_r2({preds, n}, {truths, n});
  });
}

sohtl_status sohtl_quantile_index(size_t q, double alpha, size_t* out) {
  return guard([&] {
    need(out, "out");
    *out = sohtl::conformal::quantile_index(q, alpha);
  });
}

sohtl_status sohtl_epsilon_hat(const double* scores, size_t q, double alpha, double* out, int* infinite) {
  return guard([&] {
    need(scores, "scores");
    need(out, "out");
    if (q == 0) throw sohtl::ContractError("epsilon_hat: need at least one score");
    std::vector<double> zeros(q, 0.0);
    // Scores are residual magnitudes; reuse the residual path with zero labels.
    std::vector<double> abs_scores(scores, scores + q);
    for (double s : abs_scores)
      if (s < 0.0) throw sohtl::ContractError("epsilon_hat: scores must be non-negative");
    const auto e = sohtl::conformal::epsilon_hat(sohtl::conformal::scores_from_residuals(abs_scores, zeros), alpha);
    *out = e.value;
    if (infinite != nullptr) *infinite = e.infinite ? 1 : 0;
  });
}

}  // extern "C"
