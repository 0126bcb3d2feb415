#ifndef GEOPE_H
#define GEOPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum GeopeStatus {
  GEOPE_STATUS_OK = 0,
  GEOPE_STATUS_NULL_POINTER = 1,
  GEOPE_STATUS_INVALID_ARGUMENT = 2,
  /*
   Unknown gate or method, or invalid settings.
   */
  GEOPE_STATUS_CONFIG = 3,
  /*
   A numerical failure (for example a non positive-definite Hessian).
   */
  GEOPE_STATUS_NUMERICAL = 4,
  /*
   The output buffer is too small; the required length is reported.
   */
  GEOPE_STATUS_BUFFER_TOO_SMALL = 5,
  /*
   An internal panic was caught.
   */
  GEOPE_STATUS_PANIC = 6,
} GeopeStatus;

/*
 A control problem on the Rydberg lattice.
 */
typedef struct GeopeProblem GeopeProblem;

/*
 Outcome of one optimisation run.
 */
typedef struct GeopeResult GeopeResult;

/*
 Settings of one run; see [`geope_run_options_default`].
 */
typedef struct GeopeRunOptions {
  size_t layers;
  size_t max_iters;
  uint64_t seed;
  /*
   Half-width of the uniform initial controls.
   */
  double init_scale;
  /*
   Solution threshold; values <= 0 use the problem's threshold.
   */
  double epsilon;
} GeopeRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread (empty after a success).
 The pointer stays valid until the next call on the same thread.
 */
const char *geope_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *geope_version(void);

/*
 Builds the Rydberg control problem for `gate` ("toffoli", "ccz" or "qft")
 on `qubits` atoms with coupling scale `j0` and solution threshold `epsilon`.

 # Safety
 `gate` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum GeopeStatus geope_problem_new_rydberg(const char *gate,
                                           size_t qubits,
                                           double j0,
                                           double epsilon,
                                           struct GeopeProblem **out);

/*
 Releases a problem. Null is ignored.

 # Safety
 `problem` must come from [`geope_problem_new_rydberg`] and not be used afterwards.
 */
void geope_problem_free(struct GeopeProblem *problem);

/*
 Number of controls `K` per layer (0 for a null handle).

 # Safety
 `problem` must be null or a live handle.
 */
size_t geope_problem_control_count(const struct GeopeProblem *problem);

/*
 Hilbert-space dimension `2^n` (0 for a null handle).

 # Safety
 `problem` must be null or a live handle.
 */
size_t geope_problem_dim(const struct GeopeProblem *problem);

/*
 Infidelity of the row-major `layers x K` pulse table `values`.

 # Safety
 `values` must point to `layers * K` doubles; `out` must be valid.
 */
enum GeopeStatus geope_infidelity(const struct GeopeProblem *problem,
                                  const double *values,
                                  size_t layers,
                                  double *out);

/*
 Defaults: 20 layers, 200 iterations, seed 0, init scale 1, problem threshold.
 */
struct GeopeRunOptions geope_run_options_default(void);

/*
 Runs `method` ("geope", "grape-adam", "grape-nr" or "grape-rfo") with
 its hyperparameter (`eta_max`, learning rate, `delta` or `kappa`).

 # Safety
 `problem` must be a live handle, `method` a NUL-terminated string,
 `options` and `out` valid pointers.
 */
enum GeopeStatus geope_solve(const struct GeopeProblem *problem,
                             const char *method,
                             double hyperparameter,
                             const struct GeopeRunOptions *options,
                             struct GeopeResult **out);

/*
 Releases a result. Null is ignored.

 # Safety
 `result` must come from [`geope_solve`] and not be used afterwards.
 */
void geope_result_free(struct GeopeResult *result);

/*
 Iteration at which the run was solved, or -1 (also for a null handle).

 # Safety
 `result` must be null or a live handle.
 */
int64_t geope_result_solved_at(const struct GeopeResult *result);

/*
 Number of steps taken (0 for a null handle).

 # Safety
 `result` must be null or a live handle.
 */
size_t geope_result_iterations(const struct GeopeResult *result);

/*
 Last recorded infidelity (1 for a null handle).

 # Safety
 `result` must be null or a live handle.
 */
double geope_result_final_infidelity(const struct GeopeResult *result);

/*
 Copies the per-iteration infidelities (iteration 0 first). `required`
 (may be null) receives the number of values; pass `capacity = 0` to query it.

 # Safety
 `buffer` must hold `capacity` doubles.
 */
enum GeopeStatus geope_result_infidelities(const struct GeopeResult *result,
                                           double *buffer,
                                           size_t capacity,
                                           size_t *required);

/*
 Copies the final pulses, row-major `layers x K`.

 # Safety
 `buffer` must hold `capacity` doubles.
 */
enum GeopeStatus geope_result_pulses(const struct GeopeResult *result,
                                     double *buffer,
                                     size_t capacity,
                                     size_t *required);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOPE_H */
