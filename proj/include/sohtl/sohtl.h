#ifndef SOHTL_H
#define SOHTL_H

/* C interface to the SOH transfer-learning pipeline. */

#include <stddef.h>
#include <stdint.h>

#if defined(SOHTL_BUILDING_LIBRARY)
#define SOHTL_API __attribute__((visibility("default")))
#else
#define SOHTL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sohtl_status {
  SOHTL_OK = 0,
  SOHTL_ERR_CONTRACT = 1, /* invalid argument or misuse of the API */
  SOHTL_ERR_CONFIG = 2,
  SOHTL_ERR_DATA = 3,     /* missing or corrupt files, IO failures */
  SOHTL_ERR_NUMERIC = 4,  /* non-finite values, training divergence */
  SOHTL_ERR_INTERNAL = 5
} sohtl_status;

typedef struct sohtl_pipeline sohtl_pipeline;

/* Message of the last failure on the calling thread ("" if none). */
SOHTL_API const char* sohtl_last_error(void);

/* config_path may be NULL for built-in defaults. */
SOHTL_API sohtl_status sohtl_pipeline_open(const char* config_path, sohtl_pipeline** out);
SOHTL_API void sohtl_pipeline_close(sohtl_pipeline* p);

/* "dotted.key=value"; the value is JSON or a bare string. */
SOHTL_API sohtl_status sohtl_pipeline_set(sohtl_pipeline* p, const char* assignment);
SOHTL_API sohtl_status sohtl_pipeline_set_seed(sohtl_pipeline* p, uint64_t seed);
SOHTL_API sohtl_status sohtl_pipeline_set_jobs(sohtl_pipeline* p, size_t jobs);
SOHTL_API sohtl_status sohtl_pipeline_set_output(sohtl_pipeline* p, const char* dir);

/* Writes the resolved configuration JSON into buf (NUL-terminated). When buf
 * is too small, *needed receives the required size including the NUL. */
SOHTL_API sohtl_status sohtl_pipeline_config_json(const sohtl_pipeline* p, char* buf, size_t size, size_t* needed);

/* Pipeline stages. variant is "baseline", "finetune" or "adapted"; NULL
 * selects all three where that makes sense. */
SOHTL_API sohtl_status sohtl_generate(sohtl_pipeline* p);
SOHTL_API sohtl_status sohtl_train(sohtl_pipeline* p, const char* variant);
SOHTL_API sohtl_status sohtl_tune(sohtl_pipeline* p, double* lambda_star);
SOHTL_API sohtl_status sohtl_calibrate(sohtl_pipeline* p, const char* variant, double* eps_hat);
SOHTL_API sohtl_status sohtl_forecast(sohtl_pipeline* p, const char* variant);
SOHTL_API sohtl_status sohtl_evaluate(sohtl_pipeline* p);
SOHTL_API sohtl_status sohtl_export_plot(sohtl_pipeline* p);

/* Metrics on SOH fractions; rmse is reported in percent SOH. */
SOHTL_API sohtl_status sohtl_metric_rmse(const double* preds, const double* truths, size_t n, double* out);
SOHTL_API sohtl_status sohtl_metric_r2(const double* preds, const double* truths, size_t n, double* out);

/* Split-conformal helpers. */
SOHTL_API sohtl_status sohtl_quantile_index(size_t q, double alpha, size_t* out);
SOHTL_API sohtl_status sohtl_epsilon_hat(const double* scores, size_t q, double alpha, double* out, int* infinite);

#ifdef __cplusplus
}
#endif

#endif /* SOHTL_H */
