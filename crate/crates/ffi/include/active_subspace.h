#ifndef ACTIVE_SUBSPACE_H
#define ACTIVE_SUBSPACE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AsStatus {
  AS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  AS_STATUS_NULL_POINTER = 1,
  /**
   * A parameter or buffer length was rejected.
   */
  AS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Objects built on different function spaces were combined.
   */
  AS_STATUS_SPACE_MISMATCH = 3,
  /**
   * A solver, eigenproblem or user callback failed.
   */
  AS_STATUS_NUMERICAL = 4,
  /**
   * Reading or writing a file failed.
   */
  AS_STATUS_IO = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  AS_STATUS_PANIC = 6,
} AsStatus;

/**
 * Estimated active subspace.
 */
typedef struct AsEstimate AsEstimate;

/**
 * Differentiable functional on a space.
 */
typedef struct AsFunctional AsFunctional;

/**
 * Gaussian measure with a Karhunen-Loeve expansion.
 */
typedef struct AsMeasure AsMeasure;

/**
 * Discretized `L²` space on a uniform grid.
 */
typedef struct AsSpace AsSpace;

/**
 * User functional. Must write `f(u)` to `*value` and, when `gradient` is
 * not null, the `L²` gradient representer (`len` grid values) to
 * `gradient`. Return 0 on success, anything else on failure.
 *
 * The callback may be invoked concurrently from several threads.
 */
typedef int32_t (*AsEvaluateFn)(void *user_data,
                                const double *u,
                                size_t len,
                                double *value,
                                double *gradient);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *as_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *as_version(void);

/**
 * Trapezoid-weighted `L²` on an `nx × ny` grid over the unit square.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AsStatus as_space_new_unit_square(size_t nx, size_t ny, struct AsSpace **out);

/**
 * Number of grid nodes, or 0 for a null handle.
 *
 * # Safety
 * `space` must be null or a live handle.
 */
size_t as_space_len(const struct AsSpace *space);

/**
 * `⟨u, v⟩` under the trapezoid weights.
 *
 * # Safety
 * `u` and `v` must point to `len` values, `result` to one.
 */
enum AsStatus as_space_inner_product(const struct AsSpace *space,
                                     const double *u,
                                     const double *v,
                                     size_t len,
                                     double *result);

/**
 * # Safety
 * `space` must be null or a handle not yet freed.
 */
void as_space_free(struct AsSpace *space);

/**
 * Zero-mean Gaussian measure with KL modes `sin(iπx) sin(jπy)` and
 * eigenvalues `amplitude · (i² + j²)^(−decay)`, `1 ≤ i, j ≤ m_per_axis`.
 *
 * # Safety
 * `space` must be a live handle and `out` a valid pointer.
 */
enum AsStatus as_measure_new_separable_sine(const struct AsSpace *space,
                                            size_t m_per_axis,
                                            double decay,
                                            double amplitude,
                                            struct AsMeasure **out);

/**
 * Number of KL modes, or 0 for a null handle.
 *
 * # Safety
 * `measure` must be null or a live handle.
 */
size_t as_measure_modes(const struct AsMeasure *measure);

/**
 * Draws sample `index` of the stream `seed` into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum AsStatus as_measure_sample(const struct AsMeasure *measure,
                                uint64_t seed,
                                uint64_t index,
                                double *out,
                                size_t len);

/**
 * # Safety
 * `measure` must be null or a handle not yet freed.
 */
void as_measure_free(struct AsMeasure *measure);

/**
 * `f(u) = ⟨u, h1⟩ + ⟨u, h2⟩`.
 *
 * # Safety
 * `h1` and `h2` must point to `len` values.
 */
enum AsStatus as_functional_new_linear(const struct AsSpace *space,
                                       const double *h1,
                                       const double *h2,
                                       size_t len,
                                       struct AsFunctional **out);

/**
 * `f(u) = ½ Σ a_k ⟨u, φ_{m_k}⟩²` over KL modes of `measure` (0-based
 * indices `modes`, coefficients `coeffs`, both of length `n`).
 *
 * # Safety
 * `modes` and `coeffs` must point to `n` values.
 */
enum AsStatus as_functional_new_quadratic(const struct AsMeasure *measure,
                                          const size_t *modes,
                                          const double *coeffs,
                                          size_t n,
                                          struct AsFunctional **out);

/**
 * Reduced cost of the distributed Poisson control problem with
 * regularization `alpha`.
 *
 * # Safety
 * `space` must be a live handle and `out` a valid pointer.
 */
enum AsStatus as_functional_new_poisson(const struct AsSpace *space,
                                        double alpha,
                                        struct AsFunctional **out);

/**
 * Functional backed by a C callback. `user_data` is passed through
 * untouched and must outlive the handle.
 *
 * # Safety
 * `evaluate` must follow the [`AsEvaluateFn`] contract.
 */
enum AsStatus as_functional_new_callback(const struct AsSpace *space,
                                         AsEvaluateFn evaluate,
                                         void *user_data,
                                         struct AsFunctional **out);

/**
 * Evaluates `f(u)` and, when `gradient` is not null, its gradient.
 *
 * # Safety
 * `u` must point to `len` values, `value` to one, `gradient` to `len` or be null.
 */
enum AsStatus as_functional_evaluate(const struct AsFunctional *functional,
                                     const double *u,
                                     size_t len,
                                     double *value,
                                     double *gradient);

/**
 * # Safety
 * `functional` must be null or a handle not yet freed.
 */
void as_functional_free(struct AsFunctional *functional);

/**
 * Monte Carlo estimate of the active subspace from `samples` gradients.
 * Eigenvalues at or below `rank_tol · σ₁` are dropped.
 *
 * # Safety
 * `functional` and `measure` must be live handles and `out` a valid pointer.
 */
enum AsStatus as_estimate_new(const struct AsFunctional *functional,
                              const struct AsMeasure *measure,
                              size_t samples,
                              uint64_t seed,
                              double rank_tol,
                              struct AsEstimate **out);

/**
 * Number of retained eigenpairs, or 0 for a null handle.
 *
 * # Safety
 * `estimate` must be null or a live handle.
 */
size_t as_estimate_rank(const struct AsEstimate *estimate);

/**
 * Copies the retained eigenvalues, descending, into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum AsStatus as_estimate_eigenvalues(const struct AsEstimate *estimate, double *out, size_t len);

/**
 * Copies eigenfunction `index` (0-based) into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum AsStatus as_estimate_eigenfunction(const struct AsEstimate *estimate,
                                        size_t index,
                                        double *out,
                                        size_t len);

/**
 * Writes the estimate as JSON to `path`, with the gradient samples in
 * `samples_path` when it is not null.
 *
 * # Safety
 * Paths must be NUL-terminated UTF-8 strings.
 */
enum AsStatus as_estimate_write(const struct AsEstimate *estimate,
                                const char *path,
                                const char *samples_path);

/**
 * # Safety
 * `estimate` must be null or a handle not yet freed.
 */
void as_estimate_free(struct AsEstimate *estimate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTIVE_SUBSPACE_H */
