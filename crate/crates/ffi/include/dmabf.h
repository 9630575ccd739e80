#ifndef DMABF_H
#define DMABF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DmabfStatus {
  DMABF_STATUS_OK = 0,
  DMABF_STATUS_NULL_POINTER = 1,
  DMABF_STATUS_INVALID_ARGUMENT = 2,
  DMABF_STATUS_CONFIG = 3,
  DMABF_STATUS_INFEASIBLE = 4,
  DMABF_STATUS_SOLVER = 5,
  DMABF_STATUS_IO = 6,
  DMABF_STATUS_PANIC = 7,
} DmabfStatus;

typedef enum DmabfMode {
  DMABF_MODE_FD = 0,
  DMABF_MODE_OP1 = 1,
  DMABF_MODE_DMA = 2,
  DMABF_MODE_UW = 3,
} DmabfMode;

typedef enum DmabfRunStatus {
  DMABF_RUN_STATUS_CONVERGED = 0,
  DMABF_RUN_STATUS_INFEASIBLE = 1,
  DMABF_RUN_STATUS_MAX_ITER = 2,
  DMABF_RUN_STATUS_FAILED = 3,
} DmabfRunStatus;

typedef struct DmabfConfig DmabfConfig;

typedef struct DmabfExperiment DmabfExperiment;

typedef struct DmabfResult DmabfResult;

/**
 * Users placed in front of an array described by a config, for one mode.
 */
typedef struct DmabfScenario DmabfScenario;

/**
 * One experiment record. Power fields are NaN unless the run converged.
 */
typedef struct DmabfRecord {
  uint64_t realization;
  enum DmabfMode mode;
  size_t k;
  enum DmabfRunStatus status;
  double tx_power_watts;
  double tx_power_dbm;
  double min_sinr_margin;
  size_t iterations;
} DmabfRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dmabf_last_error(void);

/**
 * Library version as a static string.
 */
const char *dmabf_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum DmabfStatus dmabf_config_default(struct DmabfConfig **out);

/**
 * Parses and validates a TOML config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DmabfStatus dmabf_config_from_toml(const char *toml, struct DmabfConfig **out);

/**
 * Sets one key, with the same names and value syntax as the CLI flags.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be NUL-terminated.
 */
enum DmabfStatus dmabf_config_set(struct DmabfConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be NULL or a handle from this library not yet freed.
 */
void dmabf_config_free(struct DmabfConfig *cfg);

/**
 * Runs the Monte-Carlo experiment described by `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_run(const struct DmabfConfig *cfg, struct DmabfExperiment **out);

/**
 * # Safety
 * `exp` must be NULL or a handle from this library not yet freed.
 */
void dmabf_experiment_free(struct DmabfExperiment *exp);

/**
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_experiment_len(const struct DmabfExperiment *exp, size_t *out);

/**
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_experiment_record(const struct DmabfExperiment *exp,
                                         size_t index,
                                         struct DmabfRecord *out);

/**
 * Summary mean power of one mode and user count. Returns
 * `DMABF_STATUS_INFEASIBLE` when no run of that pair converged.
 *
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_experiment_mean_power_dbm(const struct DmabfExperiment *exp,
                                                 enum DmabfMode mode,
                                                 size_t k,
                                                 double *out);

/**
 * # Safety
 * `exp` must be a live handle and `path` NUL-terminated.
 */
enum DmabfStatus dmabf_experiment_write_csv(const struct DmabfExperiment *exp, const char *path);

/**
 * # Safety
 * `exp` must be a live handle and `path` NUL-terminated.
 */
enum DmabfStatus dmabf_experiment_write_json(const struct DmabfExperiment *exp, const char *path);

/**
 * Builds a single instance: `num_users` users at `user_xyz` (three
 * coordinates each, meters) for the array, rate and noise of `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle, `user_xyz` must hold `3 * num_users` doubles
 * and `out` must be a valid pointer.
 */
enum DmabfStatus dmabf_scenario_new(const struct DmabfConfig *cfg,
                                    enum DmabfMode mode,
                                    const double *user_xyz,
                                    size_t num_users,
                                    struct DmabfScenario **out);

/**
 * # Safety
 * `scenario` must be NULL or a handle from this library not yet freed.
 */
void dmabf_scenario_free(struct DmabfScenario *scenario);

/**
 * Solves the scenario. An infeasible instance still returns a result, whose
 * status says so.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_scenario_solve(const struct DmabfScenario *scenario,
                                      uint64_t seed,
                                      struct DmabfResult **out);

/**
 * # Safety
 * `result` must be NULL or a handle from this library not yet freed.
 */
void dmabf_result_free(struct DmabfResult *result);

/**
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_result_status(const struct DmabfResult *result, enum DmabfRunStatus *out);

/**
 * Radiated power in watts; NaN for infeasible results.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_result_tx_power_watts(const struct DmabfResult *result, double *out);

/**
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum DmabfStatus dmabf_result_iterations(const struct DmabfResult *result, size_t *out);

/**
 * Copies the achieved SINRs into `buf`. `written` receives the number of
 * users; a buffer shorter than that is an invalid argument.
 *
 * # Safety
 * `result` must be a live handle, `buf` must hold `len` doubles and
 * `written` must be a valid pointer.
 */
enum DmabfStatus dmabf_result_sinrs(const struct DmabfResult *result,
                                    double *buf,
                                    size_t len,
                                    size_t *written);

/**
 * Nearest point of the Lorentzian weight circle `(j + e^{j phi}) / 2`.
 *
 * # Safety
 * `out_re` and `out_im` must be valid pointers.
 */
enum DmabfStatus dmabf_lorentzian_project(double re, double im, double *out_re, double *out_im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DMABF_H */
