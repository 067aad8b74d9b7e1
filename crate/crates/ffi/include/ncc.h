#ifndef NCC_H
#define NCC_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum NccStatus {
  NCC_STATUS_OK = 0,
  NCC_STATUS_NULL_ARGUMENT = 1,
  NCC_STATUS_INVALID_ARGUMENT = 2,
  NCC_STATUS_CONFIG = 3,
  NCC_STATUS_IO = 4,
  NCC_STATUS_CHECKPOINT = 5,
  NCC_STATUS_NUMERIC_FAILURE = 6,
  NCC_STATUS_INCOMPATIBLE = 7,
  NCC_STATUS_CHECKS_FAILED = 8,
  NCC_STATUS_INTERNAL = 9,
} NccStatus;

/**
 * A validated experiment config.
 */
typedef struct NccExperiment NccExperiment;

/**
 * Outcome of [`ncc_experiment_run`].
 */
typedef struct NccReport NccReport;

/**
 * Per-seed summary. Rewards are NaN when unavailable.
 */
typedef struct NccSeedResult {
  uint64_t seed;
  bool failed;
  size_t episodes_completed;
  /**
   * Mean training reward over the last 100 episodes.
   */
  double final_mean_reward;
  /**
   * Greedy evaluation after training.
   */
  double eval_mean;
} NccSeedResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ncc_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *ncc_last_error(void);

/**
 * Loads and validates a JSON experiment config.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must be NULL or
 * writable.
 */
enum NccStatus ncc_experiment_load(const char *path, struct NccExperiment **out_handle);

/**
 * # Safety
 * `h` must be NULL or a handle from [`ncc_experiment_load`] not yet freed.
 */
void ncc_experiment_free(struct NccExperiment *h);

/**
 * Replaces the configured seed list.
 *
 * # Safety
 * `seeds` must point to `n` readable values.
 */
enum NccStatus ncc_experiment_set_seeds(struct NccExperiment *h, const uint64_t *seeds, size_t n);

/**
 * Overrides the number of training episodes per seed.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum NccStatus ncc_experiment_set_episodes(struct NccExperiment *h, size_t episodes);

/**
 * Trains every seed and writes the run directory. `out_dir` may be NULL to
 * use `NCC_OUT_DIR`, the config's `output_dir` or `runs/<name>`. A seed that
 * fails numerically does not make the call fail; inspect the report.
 *
 * # Safety
 * `h` must be a live handle; `out_dir` NULL or NUL-terminated; `report`
 * writable.
 */
enum NccStatus ncc_experiment_run(const struct NccExperiment *h,
                                  const char *out_dir,
                                  struct NccReport **report);

/**
 * Greedy evaluation of a checkpoint written for this config.
 *
 * # Safety
 * `h` must be a live handle, `checkpoint` NUL-terminated, `mean` and `std`
 * writable.
 */
enum NccStatus ncc_evaluate_checkpoint(const struct NccExperiment *h,
                                       const char *checkpoint,
                                       size_t episodes,
                                       double *mean,
                                       double *std);

/**
 * # Safety
 * `r` must be NULL or a report not yet freed.
 */
void ncc_report_free(struct NccReport *r);

/**
 * Number of seeds in the report; 0 for NULL.
 *
 * # Safety
 * `r` must be NULL or a live report.
 */
size_t ncc_report_seed_count(const struct NccReport *r);

/**
 * # Safety
 * `r` must be a live report and `result` writable.
 */
enum NccStatus ncc_report_seed(const struct NccReport *r,
                               size_t index,
                               struct NccSeedResult *result);

/**
 * Finite-difference gradient suite. `failed` receives the number of
 * failing checks.
 *
 * # Safety
 * `failed` must be writable.
 */
enum NccStatus ncc_run_gradcheck(uint64_t seed, size_t instances, size_t *failed);

/**
 * KL, GCN and joint-max oracles.
 *
 * # Safety
 * `failed` must be writable.
 */
enum NccStatus ncc_run_oracles(uint64_t seed, size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCC_H */
