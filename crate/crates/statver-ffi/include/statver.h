#ifndef STATVER_H
#define STATVER_H

/* Generated from the statver-ffi crate (cargo build -p statver-ffi regenerates it). */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every ABI call. Besides `Ok`, `NullArgument`, and
 * `InternalPanic` (which originate at the boundary itself), each code
 * corresponds to one error class of the underlying library.
 */
typedef enum StatverStatus {
  STATVER_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  STATVER_STATUS_NULL_ARGUMENT = 1,
  STATVER_STATUS_INVALID_ARGUMENT = 2,
  STATVER_STATUS_DIMENSION_MISMATCH = 3,
  STATVER_STATUS_NUMERICAL_FAILURE = 4,
  /**
   * Hyperparameter estimation failed on every restart.
   */
  STATVER_STATUS_MLE_FAILED = 5,
  /**
   * Formula text failed to parse; the message carries a byte position.
   */
  STATVER_STATUS_PARSE_ERROR = 6,
  STATVER_STATUS_UNKNOWN_CHANNEL = 7,
  /**
   * A temporal window extends beyond the trajectory's time range.
   */
  STATVER_STATUS_WINDOW_OUTSIDE_TRAJECTORY = 8,
  /**
   * A simulated state stopped being finite.
   */
  STATVER_STATUS_SIMULATION_DIVERGED = 9,
  STATVER_STATUS_OUT_OF_BOUNDS = 10,
  STATVER_STATUS_CONFIG_ERROR = 11,
  STATVER_STATUS_IO_ERROR = 12,
  STATVER_STATUS_DECODE_ERROR = 13,
  /**
   * An internal panic was caught at the boundary.
   */
  STATVER_STATUS_INTERNAL_PANIC = 14,
} StatverStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct StatverGp StatverGp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Explanation of the most recent non-OK status on this thread. The pointer
 * stays valid until the next failing call on the same thread. Never null;
 * empty when no error has occurred yet.
 */
const char *statver_last_error_message(void);

/**
 * Static name of a status code (e.g. `"OK"`, `"PARSE_ERROR"`).
 */
const char *statver_status_name(enum StatverStatus status);

/**
 * Trains a GP with fixed hyperparameters.
 *
 * `params` is row-major `n × dim`; `lengthscales` has `dim` entries.
 * On success `*out` receives an owned handle (release with
 * `statver_gp_free`).
 *
 * # Safety
 * Pointers must cover the documented extents and `out` must be writable.
 */
enum StatverStatus statver_gp_fit(const double *params,
                                  size_t n,
                                  size_t dim,
                                  const double *measurements,
                                  double signal_variance,
                                  const double *lengthscales,
                                  double noise_std,
                                  struct StatverGp **out);

/**
 * Trains a GP with hyperparameters estimated by multi-start likelihood
 * ascent (deterministic for identical inputs). `noise_std` is the
 * observation noise, estimated too when `learn_noise` is set.
 *
 * # Safety
 * As for `statver_gp_fit`.
 */
enum StatverStatus statver_gp_fit_mle(const double *params,
                                      size_t n,
                                      size_t dim,
                                      const double *measurements,
                                      double noise_std,
                                      bool learn_noise,
                                      size_t restarts,
                                      struct StatverGp **out);

/**
 * Posterior mean and variance at one query point.
 *
 * # Safety
 * `model` must be a live handle, `theta` must hold `dim` doubles matching
 * the training dimension, and the out-pointers must be writable.
 */
enum StatverStatus statver_gp_predict(const struct StatverGp *model,
                                      const double *theta,
                                      size_t dim,
                                      double *out_mean,
                                      double *out_variance);

/**
 * Number of training points held by the model; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t statver_gp_train_len(const struct StatverGp *model);

/**
 * Parameter-space dimension of the model; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t statver_gp_dim(const struct StatverGp *model);

/**
 * Releases a handle. Null is a no-op; handles must not be used afterwards.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void statver_gp_free(struct StatverGp *model);

/**
 * Satisfaction probability when the latent requirement value is known
 * exactly: Φ-style CDF of `latent_mean` against noise `noise_std`.
 *
 * # Safety
 * `out` must be writable.
 */
enum StatverStatus statver_true_p_sat(double latent_mean, double noise_std, double *out);

/**
 * Predicted satisfaction probability under a GP posterior (μ, Σ).
 *
 * # Safety
 * `out` must be writable.
 */
enum StatverStatus statver_predicted_p_sat(double mean,
                                           double variance,
                                           double noise_std,
                                           double *out);

/**
 * First-order variance of the predicted satisfaction probability.
 *
 * # Safety
 * `out` must be writable.
 */
enum StatverStatus statver_cdf_variance(double mean,
                                        double variance,
                                        double noise_std,
                                        double *out);

/**
 * Posterior variance after one hypothetical sample at the point.
 *
 * # Safety
 * `out` must be writable.
 */
enum StatverStatus statver_posterior_variance_after_sample(double mean,
                                                           double variance,
                                                           double noise_std,
                                                           double *out);

/**
 * Reduction in CDF variance from one hypothetical sample at the point —
 * the acquisition score of the proposed sampling strategy.
 *
 * # Safety
 * `out` must be writable.
 */
enum StatverStatus statver_variance_reduction(double mean,
                                              double variance,
                                              double noise_std,
                                              double *out);

/**
 * Chebyshev-style diagnostic bound `min(1, V/a²)` on the probability that
 * the predicted satisfaction probability is off by more than `a`.
 *
 * # Safety
 * `out` must be writable.
 */
enum StatverStatus statver_chebyshev_bound(double cdf_variance, double a, double *out);

/**
 * Parses a requirement formula, reporting only whether it is valid. On
 * failure the error message pinpoints the byte position.
 *
 * # Safety
 * `spec` must be a NUL-terminated string.
 */
enum StatverStatus statver_stl_parse_check(const char *spec);

/**
 * Quantitative robustness of a formula over a sampled trajectory.
 *
 * The trajectory holds `n_channels` named channels sampled at the same
 * `n_samples` strictly increasing times: `channel_names[i]` names the
 * channel whose values live at `channel_values[i][0..n_samples]`.
 *
 * # Safety
 * `spec` and each `channel_names[i]` must be NUL-terminated strings;
 * `times` must hold `n_samples` doubles; `channel_values` must hold
 * `n_channels` pointers to `n_samples` doubles each; `out` must be
 * writable.
 */
enum StatverStatus statver_stl_robustness(const char *spec,
                                          const double *times,
                                          size_t n_samples,
                                          const char *const *channel_names,
                                          const double *const *channel_values,
                                          size_t n_channels,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STATVER_H */
