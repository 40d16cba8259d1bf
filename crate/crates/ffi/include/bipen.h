#ifndef BIPEN_H
#define BIPEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum BipenStatus {
  BIPEN_STATUS_OK = 0,
  BIPEN_STATUS_NULL_POINTER = 1,
  BIPEN_STATUS_INVALID_ARGUMENT = 2,
  BIPEN_STATUS_CONFIG = 3,
  BIPEN_STATUS_NUMERICAL = 4,
  BIPEN_STATUS_UNSUPPORTED = 5,
  BIPEN_STATUS_KKT_INCONSISTENT = 6,
  BIPEN_STATUS_PARSE = 7,
  BIPEN_STATUS_IO = 8,
  BIPEN_STATUS_OUT_OF_RANGE = 9,
  BIPEN_STATUS_PANIC = 10,
} BipenStatus;

/**
 * A parsed run configuration.
 */
typedef struct BipenConfig BipenConfig;

/**
 * A named test problem.
 */
typedef struct BipenProblem BipenProblem;

/**
 * A finished solver run: final state plus its metric rows.
 */
typedef struct BipenRun BipenRun;

/**
 * One metric row. Absent optional values are NaN.
 */
typedef struct BipenRow {
  uint64_t k;
  double sigma;
  double alpha;
  double beta;
  double gamma;
  double eta;
  uint64_t t;
  uint64_t m;
  double delta_x;
  double delta_y;
  double delta_z;
  double eps_level;
  double potential;
  double psi_sigma;
  uint64_t oracle_calls;
  double wall_ms;
} BipenRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bipen_last_error(void);

/**
 * Library version as a static string.
 */
const char *bipen_version(void);

/**
 * Builds the test problem called `name`.
 *
 * # Safety
 * `name` must be a valid C string and `problem` a valid out-pointer.
 */
enum BipenStatus bipen_problem_new(const char *name, struct BipenProblem **problem);

/**
 * # Safety
 * `problem` must come from [`bipen_problem_new`] or be null.
 */
void bipen_problem_free(struct BipenProblem *problem);

/**
 * Upper and lower dimensions.
 *
 * # Safety
 * All pointers must be valid.
 */
enum BipenStatus bipen_problem_dims(const struct BipenProblem *problem,
                                    size_t *dim_x,
                                    size_t *dim_y);

/**
 * Penalized hyper-objective at `x` (length `len`) and `sigma > 0`.
 *
 * # Safety
 * `x` must point to `len` doubles; the other pointers must be valid.
 */
enum BipenStatus bipen_psi_sigma(const struct BipenProblem *problem,
                                 const double *x,
                                 size_t len,
                                 double sigma,
                                 double *value);

/**
 * Hyper-objective `psi` at `x`.
 *
 * # Safety
 * `x` must point to `len` doubles; the other pointers must be valid.
 */
enum BipenStatus bipen_psi(const struct BipenProblem *problem,
                           const double *x,
                           size_t len,
                           double *value);

/**
 * Parses a `key = value` configuration.
 *
 * # Safety
 * `source` must be a valid C string and `config` a valid out-pointer.
 */
enum BipenStatus bipen_config_parse(const char *source, struct BipenConfig **config);

/**
 * # Safety
 * `config` must come from [`bipen_config_parse`] or be null.
 */
void bipen_config_free(struct BipenConfig *config);

/**
 * Runs replica `replica` of the configured experiment in memory.
 *
 * # Safety
 * `config` must be a live handle and `run` a valid out-pointer.
 */
enum BipenStatus bipen_solve(const struct BipenConfig *config,
                             uint64_t replica,
                             struct BipenRun **run);

/**
 * # Safety
 * `run` must come from [`bipen_solve`] or be null.
 */
void bipen_run_free(struct BipenRun *run);

/**
 * Number of metric rows in the run; 0 for a null handle.
 *
 * # Safety
 * `run` must be a live handle or null.
 */
size_t bipen_run_row_count(const struct BipenRun *run);

/**
 * Copies row `index` into `row`.
 *
 * # Safety
 * `run` must be a live handle and `row` a valid out-pointer.
 */
enum BipenStatus bipen_run_row(const struct BipenRun *run, size_t index, struct BipenRow *row);

/**
 * Copies the final upper-level iterate into `x`, which holds `capacity`
 * doubles. `written` receives the dimension even when `capacity` is too
 * small, in which case nothing is copied and `OutOfRange` is returned.
 *
 * # Safety
 * `x` must point to `capacity` writable doubles; `written` must be valid.
 */
enum BipenStatus bipen_run_final_x(const struct BipenRun *run,
                                   double *x,
                                   size_t capacity,
                                   size_t *written);

/**
 * Total gradient-oracle calls of the run.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum BipenStatus bipen_run_oracle_calls(const struct BipenRun *run, uint64_t *calls);

/**
 * Writes the run's metric rows as a trace file at `path`.
 *
 * # Safety
 * `run` must be a live handle and `path` a valid C string.
 */
enum BipenStatus bipen_run_write_trace(const struct BipenRun *run, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIPEN_H */
