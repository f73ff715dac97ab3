#ifndef RANDINV_H
#define RANDINV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum RandinvStatus {
  /**
   * Success.
   */
  RandinvOk = 0,
  /**
   * A required pointer argument was null.
   */
  RandinvNullPointer = 1,
  /**
   * An argument was out of range or unparsable.
   */
  RandinvInvalidArgument = 2,
  /**
   * Operand dimensions disagree.
   */
  RandinvDimensionMismatch = 3,
  /**
   * The iterative solver did not reach its tolerance.
   */
  RandinvNotConverged = 4,
  /**
   * A covariance or linear system was singular.
   */
  RandinvSingular = 5,
  /**
   * Any other failure; see `randinv_last_error`.
   */
  RandinvInternalError = 6,
} RandinvStatus;

/**
 * Opaque inverse-problem handle.
 */
typedef struct RandinvProblem RandinvProblem;

/**
 * Opaque solve-result handle.
 */
typedef struct RandinvResult RandinvResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last error on this thread; valid until the next failing
 * call on the same thread.
 */
const char *randinv_last_error(void);

/**
 * Crate version as a static string.
 */
const char *randinv_version(void);

/**
 * Create a dense linear Gaussian problem. `a` is row-major with `k` rows
 * (observations) and `n` columns (parameters); `data` has length `k`,
 * `prior_mean` length `n`. Noise and prior covariances are scaled
 * identities with the given (positive) variances.
 *
 * # Safety
 * `a`, `data`, and `prior_mean` must point to buffers of the stated
 * lengths; `out` must be a valid location for the handle.
 */
enum RandinvStatus randinv_problem_dense_create(const double *a,
                                                uintptr_t k,
                                                uintptr_t n,
                                                const double *data,
                                                const double *prior_mean,
                                                double noise_var,
                                                double prior_var,
                                                struct RandinvProblem **out);

/**
 * Create one of the built-in benchmark problems by name ("deconv1d",
 * "xray", "advdiff", "nlheat"). `size` overrides the default parameter
 * count / grid side when nonzero.
 *
 * # Safety
 * `id` must be a NUL-terminated string; `out` must be valid.
 */
enum RandinvStatus randinv_problem_benchmark_create(const char *id,
                                                    uintptr_t size,
                                                    struct RandinvProblem **out);

/**
 * Release a problem handle. Null is ignored.
 *
 * # Safety
 * `p` must be a handle from a `randinv_problem_*_create` call, released
 * at most once.
 */
void randinv_problem_destroy(struct RandinvProblem *p);

/**
 * Parameter count of the problem.
 *
 * # Safety
 * `p` must be a live problem handle.
 */
uintptr_t randinv_problem_param_dim(const struct RandinvProblem *p);

/**
 * Solve with the named method ("MAP", "RMAP", "RMA", "RMA_RMAP", "RS_U1",
 * "RS", "ENKF", "ALL", ...) using `n_samples` per randomized variable and
 * the given RNG seed.
 *
 * # Safety
 * `p` must be a live problem handle, `method` a NUL-terminated string, and
 * `out` a valid location for the result handle.
 */
enum RandinvStatus randinv_solve(const struct RandinvProblem *p,
                                 const char *method,
                                 uintptr_t n_samples,
                                 uint64_t seed,
                                 struct RandinvResult **out);

/**
 * Release a result handle. Null is ignored.
 *
 * # Safety
 * `r` must be a handle from `randinv_solve`, released at most once.
 */
void randinv_result_destroy(struct RandinvResult *r);

/**
 * Length of the estimate vector.
 *
 * # Safety
 * `r` must be a live result handle.
 */
uintptr_t randinv_result_dim(const struct RandinvResult *r);

/**
 * Copy the estimate into `buf` (capacity `len`, which must equal the
 * result dimension).
 *
 * # Safety
 * `r` must be a live result handle; `buf` must hold `len` doubles.
 */
enum RandinvStatus randinv_result_estimate(const struct RandinvResult *r,
                                           double *buf,
                                           uintptr_t len);

/**
 * Final objective value of the solve.
 *
 * # Safety
 * `r` must be a live result handle.
 */
double randinv_result_objective(const struct RandinvResult *r);

/**
 * Iteration count of the dominant inner solver.
 *
 * # Safety
 * `r` must be a live result handle.
 */
uintptr_t randinv_result_iterations(const struct RandinvResult *r);

/**
 * 1 when the solve finished without convergence flags, 0 otherwise.
 *
 * # Safety
 * `r` must be a live result handle.
 */
int32_t randinv_result_clean(const struct RandinvResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RANDINV_H */
