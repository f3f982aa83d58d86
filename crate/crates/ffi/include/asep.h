#ifndef ASEP_H
#define ASEP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AsepStatus {
  ASEP_STATUS_OK = 0,
  ASEP_STATUS_INVALID_ARGUMENT = 1,
  ASEP_STATUS_PARSE_ERROR = 2,
  ASEP_STATUS_DEGENERATE_PARAMETER = 3,
  ASEP_STATUS_POLE = 4,
  ASEP_STATUS_RESOURCE_LIMIT = 5,
  ASEP_STATUS_NULL_POINTER = 6,
  ASEP_STATUS_BUFFER_SIZE = 7,
  ASEP_STATUS_INTERNAL = 8,
} AsepStatus;

/**
 * Hop rates `p`, `q`.
 */
typedef struct AsepModel AsepModel;

/**
 * Initial data: periodic, general or deterministic.
 */
typedef struct AsepProfile AsepProfile;

/**
 * Numerical options; zero fields select the defaults.
 */
typedef struct AsepEvalOptions {
  /**
   * Series cap; 0 means `l + 4`.
   */
  size_t k_max;
  /**
   * 0 means 1e-6.
   */
  double tolerance;
  /**
   * Nodes per circle for the leading term; 0 means 48.
   */
  size_t quad_points;
  /**
   * Contour radius; 0 picks it automatically.
   */
  double radius;
} AsepEvalOptions;

typedef struct AsepCdfValue {
  size_t l;
  int64_t x;
  double value;
  double imag_residual;
  double tail_estimate;
  double quad_error_estimate;
  bool series_converged;
  bool quadrature_converged;
} AsepCdfValue;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *asep_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *asep_last_error_message(void);

struct AsepEvalOptions asep_eval_options_default(void);

/**
 * # Safety
 * `p` and `q` must be NUL-terminated strings; `out` must be writable.
 */
enum AsepStatus asep_model_new(const char *p, const char *q, struct AsepModel **out);

/**
 * # Safety
 * `model` must come from [`asep_model_new`] or be null.
 */
void asep_model_free(struct AsepModel *model);

/**
 * Periodic profile: `rho[r]` is the density on sites `n ≡ r (mod m)`.
 *
 * # Safety
 * `rho` must point to `m` NUL-terminated strings; `out` must be writable.
 */
enum AsepStatus asep_profile_periodic_new(const char *const *rho,
                                          size_t m,
                                          struct AsepProfile **out);

/**
 * Profile with `rho[n - 1]` on sites `1..=n`, empty beyond.
 *
 * # Safety
 * `rho` must point to `n` NUL-terminated strings; `out` must be writable.
 */
enum AsepStatus asep_profile_general_new(const char *const *rho,
                                         size_t n,
                                         struct AsepProfile **out);

/**
 * Deterministic initial data on the strictly increasing positive sites `y`.
 *
 * # Safety
 * `y` must point to `n` integers; `out` must be writable.
 */
enum AsepStatus asep_profile_deterministic_new(const int64_t *y,
                                               size_t n,
                                               struct AsepProfile **out);

/**
 * # Safety
 * `profile` must come from an `asep_profile_*_new` call or be null.
 */
void asep_profile_free(struct AsepProfile *profile);

/**
 * `P(x_l(t) <= x)` for every `x` in `x_min..=x_max`, written to `out[0..len]`
 * where `len >= x_max - x_min + 1`. `options` may be null.
 *
 * # Safety
 * Handles must be live; `out` must hold `len` values.
 */
enum AsepStatus asep_evaluate_cdf(const struct AsepModel *model,
                                  const struct AsepProfile *profile,
                                  size_t l,
                                  double t,
                                  int64_t x_min,
                                  int64_t x_max,
                                  const struct AsepEvalOptions *options,
                                  struct AsepCdfValue *out,
                                  size_t len);

/**
 * `P(x_l(t) = x)`. `options` may be null.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum AsepStatus asep_evaluate_pmf(const struct AsepModel *model,
                                  const struct AsepProfile *profile,
                                  size_t l,
                                  double t,
                                  int64_t x,
                                  const struct AsepEvalOptions *options,
                                  double *out);

/**
 * Monte Carlo estimate of `P(x_l(t) <= x)` for `l = 1..=l_max` and
 * `x = x_min..=x_max`, row-major by `l`. `horizon = 0` selects the default.
 *
 * # Safety
 * Handles must be live; `p_hat` and `std_error` must hold `len` values.
 */
enum AsepStatus asep_simulate_cdf(const struct AsepModel *model,
                                  const struct AsepProfile *profile,
                                  double t,
                                  size_t l_max,
                                  int64_t x_min,
                                  int64_t x_max,
                                  uint64_t trials,
                                  uint64_t seed,
                                  size_t horizon,
                                  double *p_hat,
                                  double *std_error,
                                  size_t len);

/**
 * Runs the exact identity suite with default size caps. `checks` and
 * `failures` receive the number of comparisons and of mismatches.
 *
 * # Safety
 * `checks` and `failures` must be writable.
 */
enum AsepStatus asep_run_identities(uint64_t seed, size_t trials, size_t *checks, size_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASEP_H */
