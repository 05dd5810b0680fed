#ifndef SPIKEBASIN_H
#define SPIKEBASIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_ARGUMENT = 2,
  SB_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * The certificate exists but does not certify anything, or the noise exceeds its budget.
   */
  SB_STATUS_VACUOUS = 4,
  SB_STATUS_IO = 5,
  SB_STATUS_NUMERICAL = 6,
  SB_STATUS_PANIC = 7,
} SbStatus;

typedef enum SbTermination {
  SB_TERMINATION_GRAD_TOL = 0,
  SB_TERMINATION_DIST_TOL = 1,
  SB_TERMINATION_MAX_ITERS = 2,
  SB_TERMINATION_DIVERGED = 3,
} SbTermination;

typedef struct SbObjective SbObjective;

typedef struct SbOperator SbOperator;

typedef struct SbSpikeTrain SbSpikeTrain;

/**
 * Scalar summary of a basin certificate. `noise_budget` and `noise_norm`
 * are NaN for noiseless certificates.
 */
typedef struct SbCertificate {
  double beta_max;
  double c1;
  double c2_or_c3;
  double c_h;
  double lipschitz;
  double tau_max;
  double noise_budget;
  double noise_norm;
  double lambda_min_lb;
  double lambda_max_ub;
  double gamma;
  double mu;
  bool vacuous;
} SbCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next `sb_*` call on the same thread.
 */
const char *sb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must come from an `sb_*` function that returns an owned string, or be null.
 */
void sb_string_free(char *s);

/**
 * Builds a spike train from `k` amplitudes and `k * d` row-major positions.
 *
 * # Safety
 * `amplitudes` must hold `k` values, `positions` `k * d` values, and `out`
 * must be writable.
 */
enum SbStatus sb_spike_train_new(size_t k,
                                 size_t d,
                                 double epsilon,
                                 double radius,
                                 const double *amplitudes,
                                 const double *positions,
                                 struct SbSpikeTrain **out);

/**
 * # Safety
 * `train` must come from `sb_spike_train_new` or be null.
 */
void sb_spike_train_free(struct SbSpikeTrain *train);

/**
 * Writes whether the train is ε-separated inside the radius-R ball.
 *
 * # Safety
 * Valid handle and writable `out`.
 */
enum SbStatus sb_spike_train_is_separated(const struct SbSpikeTrain *train, bool *out);

/**
 * JSON form of the train; release with `sb_string_free`.
 *
 * # Safety
 * Valid handle and writable `out`.
 */
enum SbStatus sb_spike_train_to_json(const struct SbSpikeTrain *train, char **out);

/**
 * Random Fourier operator with `ω_l ~ N(0, σ⁻² I)` and unit weights.
 *
 * # Safety
 * `out` must be writable.
 */
enum SbStatus sb_operator_gaussian(size_t m,
                                   double sigma,
                                   size_t d,
                                   uint64_t seed,
                                   struct SbOperator **out);

/**
 * Reads an operator JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SbStatus sb_operator_from_json(const char *path, struct SbOperator **out);

/**
 * # Safety
 * `op` must come from an `sb_operator_*` constructor or be null.
 */
void sb_operator_free(struct SbOperator *op);

/**
 * # Safety
 * Valid handle and writable `m`.
 */
enum SbStatus sb_operator_m(const struct SbOperator *op, size_t *m);

/**
 * Objective whose data are the exact measurements of `truth`.
 *
 * # Safety
 * Valid handles and writable `out`.
 */
enum SbStatus sb_objective_noiseless(const struct SbOperator *op,
                                     const struct SbSpikeTrain *truth,
                                     struct SbObjective **out);

/**
 * Objective for measurements given as `m` real and `m` imaginary parts.
 *
 * # Safety
 * `data_re` and `data_im` must hold `m` values; `out` must be writable.
 */
enum SbStatus sb_objective_new(const struct SbOperator *op,
                               const double *data_re,
                               const double *data_im,
                               size_t m,
                               size_t k,
                               double epsilon,
                               double radius,
                               struct SbObjective **out);

/**
 * # Safety
 * `obj` must come from an `sb_objective_*` constructor or be null.
 */
void sb_objective_free(struct SbObjective *obj);

/**
 * Length `k(d+1)` of the packed parameter vector.
 *
 * # Safety
 * Valid handle and writable `dim`.
 */
enum SbStatus sb_objective_dim(const struct SbObjective *obj, size_t *dim);

/**
 * `g(θ)` at the packed `theta = (a₁..a_k, t₁..t_k)`.
 *
 * # Safety
 * `theta` must hold `len` values and `value` be writable.
 */
enum SbStatus sb_objective_eval(const struct SbObjective *obj,
                                const double *theta,
                                size_t len,
                                double *value);

/**
 * Writes `∇g(θ)` into `grad` (`len` values).
 *
 * # Safety
 * `theta` and `grad` must each hold `len` values.
 */
enum SbStatus sb_objective_gradient(const struct SbObjective *obj,
                                    const double *theta,
                                    size_t len,
                                    double *grad);

/**
 * Writes the Hessian row-major into `hessian` (`len * len` values).
 *
 * # Safety
 * `theta` must hold `len` values and `hessian` `len * len`.
 */
enum SbStatus sb_objective_hessian(const struct SbObjective *obj,
                                   const double *theta,
                                   size_t len,
                                   double *hessian);

/**
 * Fixed-step gradient descent from `theta` (updated in place).
 *
 * # Safety
 * `theta` must hold `len` values; `iterations` and `termination` may be null.
 */
enum SbStatus sb_descend(const struct SbObjective *obj,
                         double *theta,
                         size_t len,
                         double tau,
                         size_t max_iters,
                         double grad_tol,
                         size_t *iterations,
                         enum SbTermination *termination);

/**
 * Basin certificate from user-supplied constants for a Gaussian kernel of
 * width `sigma`. A negative `noise_norm` selects the noiseless formulas.
 *
 * # Safety
 * Valid handle and writable `out`.
 */
enum SbStatus sb_certify_constants(const struct SbSpikeTrain *theta_star,
                                   double sigma,
                                   double gamma,
                                   double mu,
                                   double d_a_r,
                                   size_t m,
                                   double noise_norm,
                                   double q,
                                   struct SbCertificate *out);

/**
 * Loads a scenario (or config) file, estimates the constants with default
 * settings and certifies it.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SbStatus sb_certify_scenario_file(const char *path, uint64_t seed, struct SbCertificate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKEBASIN_H */
