#ifndef SWITCHBACK_H
#define SWITCHBACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbStatus {
  SbStatus_Ok = 0,
  SbStatus_NullPointer = 1,
  SbStatus_InvalidArgument = 2,
  SbStatus_DataError = 3,
  SbStatus_NumericalError = 4,
  SbStatus_Panic = 5,
} SbStatus;

typedef enum SbVariant {
  SbVariant_Full = 0,
  SbVariant_Marginal = 1,
  SbVariant_Interaction = 2,
} SbVariant;

/**
 * Assignment design.
 */
typedef struct SbDesign SbDesign;

/**
 * Fitted regression with its HAC covariance.
 */
typedef struct SbEstimate SbEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *sb_last_error(void);

/**
 * Bernoulli design with per-period probabilities. `floor` is the overlap bound.
 *
 * # Safety
 * `probs` must point to `len` doubles and `out` to writable storage for one pointer.
 */
enum SbStatus sb_design_binary(const double *probs,
                               uintptr_t len,
                               double floor,
                               struct SbDesign **out);

/**
 * Continuous design from declared per-period means and variances.
 *
 * # Safety
 * `means` and `variances` must each point to `len` doubles; `out` must be writable.
 */
enum SbStatus sb_design_continuous(const double *means,
                                   const double *variances,
                                   uintptr_t len,
                                   double variance_floor,
                                   struct SbDesign **out);

/**
 * # Safety
 * `design` must come from an `sb_design_*` constructor and not be freed twice. Null is ignored.
 */
void sb_design_free(struct SbDesign *design);

/**
 * Harmonic-mean lag weights `w_0..w_K` into `out` (`out_len` must be `lags + 1`).
 *
 * # Safety
 * `design` must be a live handle and `out` must point to `out_len` doubles.
 */
enum SbStatus sb_lag_weights(const struct SbDesign *design,
                             uintptr_t lags,
                             double *out,
                             uintptr_t out_len);

/**
 * Fits the lagged regression and attaches the HAC covariance.
 *
 * `bandwidth < 0` selects `floor(T^(1/4))`. `marginal_lag` is read only for
 * the marginal variant.
 *
 * # Safety
 * `design` must be live, `y` and `z` must point to `len` doubles, `out` must be writable.
 */
enum SbStatus sb_estimate(const struct SbDesign *design,
                          const double *y,
                          const double *z,
                          uintptr_t len,
                          uintptr_t lags,
                          enum SbVariant variant,
                          uintptr_t marginal_lag,
                          int64_t bandwidth,
                          struct SbEstimate **out);

/**
 * # Safety
 * `est` must come from [`sb_estimate`] and not be freed twice. Null is ignored.
 */
void sb_estimate_free(struct SbEstimate *est);

/**
 * Number of coefficients `P`, or 0 for a null handle.
 *
 * # Safety
 * `est` must be a live handle or null.
 */
uintptr_t sb_estimate_len(const struct SbEstimate *est);

/**
 * Rescaled effects `τ̂` into `out[P]`.
 *
 * # Safety
 * `est` must be live and `out` must point to `out_len` doubles.
 */
enum SbStatus sb_estimate_tau(const struct SbEstimate *est, double *out, uintptr_t out_len);

/**
 * Standard errors `sqrt(V̂_kk / (T-K))` into `out[P]`.
 *
 * # Safety
 * `est` must be live and `out` must point to `out_len` doubles.
 */
enum SbStatus sb_estimate_std_errors(const struct SbEstimate *est, double *out, uintptr_t out_len);

/**
 * HAC covariance `V̂` row-major into `out[P*P]`.
 *
 * # Safety
 * `est` must be live and `out` must point to `out_len` doubles.
 */
enum SbStatus sb_estimate_covariance(const struct SbEstimate *est, double *out, uintptr_t out_len);

/**
 * Normal-pivot intervals and two-sided p-values, each written to an array of length `P`.
 *
 * # Safety
 * `est` must be live; `low`, `high` and `p_values` must each point to `out_len` doubles.
 */
enum SbStatus sb_confidence_intervals(const struct SbEstimate *est,
                                      double level,
                                      double *low,
                                      double *high,
                                      double *p_values,
                                      uintptr_t out_len);

/**
 * Studentized Wald test on the coefficient indices `lags[0..n]`.
 *
 * # Safety
 * `est` must be live, `lags` must point to `n` indices, `statistic` and `p_value` must be writable.
 */
enum SbStatus sb_wald(const struct SbEstimate *est,
                      const uintptr_t *lags,
                      uintptr_t n,
                      double *statistic,
                      double *p_value);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to `len`).
 * Returns the full message length in bytes, or 0 when there is none.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null when `len` is 0.
 */
uintptr_t sb_last_error_copy(char *buf, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWITCHBACK_H */
