#ifndef DSNORM_H
#define DSNORM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum DsnStatus {
  DSN_STATUS_OK = 0,
  DSN_STATUS_NULL_POINTER = 1,
  DSN_STATUS_INVALID_PARAMETER = 2,
  DSN_STATUS_REFUSED = 3,
  DSN_STATUS_NOT_CONVERGED = 4,
  DSN_STATUS_DIMENSION = 5,
  DSN_STATUS_BUFFER_TOO_SMALL = 6,
  DSN_STATUS_PANIC = 7,
  DSN_STATUS_OTHER = 8,
} DsnStatus;

/**
 * Opaque model handle.
 */
typedef struct DsnModel DsnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Scales the Gaussian kernel of `n` points in `m` dimensions.
 *
 * `points` is row-major with `n * m` entries. On success `*out` receives a
 * handle that must be released with [`dsn_model_free`].
 *
 * # Safety
 * `points` must be valid for `n * m` reads and `out` for one write.
 */
enum DsnStatus dsn_model_new(const double *points,
                             size_t n,
                             size_t m,
                             double epsilon,
                             double tol,
                             size_t max_iter,
                             struct DsnModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dsn_model_new`] and not be used afterwards.
 */
void dsn_model_free(struct DsnModel *model);

/**
 * Number of points, or zero for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dsn_model_len(const struct DsnModel *model);

/**
 * Final marginal residual and iteration count of the scaling solve.
 *
 * # Safety
 * `model` must be a live handle; `residual` and `iterations` valid for one write.
 */
enum DsnStatus dsn_model_residual(const struct DsnModel *model,
                                  double *residual,
                                  size_t *iterations);

/**
 * Writes `log d_i` for every point.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `len` writes.
 */
enum DsnStatus dsn_model_log_scaling(const struct DsnModel *model, double *out, size_t len);

/**
 * Writes the unnormalized DS-KDE with exponent `s`.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `len` writes.
 */
enum DsnStatus dsn_model_density(const struct DsnModel *model, double s, double *out, size_t len);

/**
 * Writes the estimated squared noise magnitudes (not debiased).
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `len` writes.
 */
enum DsnStatus dsn_model_noise_magnitudes(const struct DsnModel *model,
                                          double s,
                                          double *out,
                                          size_t len);

/**
 * Writes the `n × n` corrected squared distances, row-major, NaN on the diagonal.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `len` writes.
 */
enum DsnStatus dsn_model_corrected_distances(const struct DsnModel *model,
                                             double s,
                                             double *out,
                                             size_t len);

/**
 * Writes the `n × n` robust Markov matrix `Ŵ^(α)`, row-major.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `len` writes.
 */
enum DsnStatus dsn_model_robust_markov(const struct DsnModel *model,
                                       double s,
                                       double alpha,
                                       double *out,
                                       size_t len);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length without the NUL.
 * Returns zero when there is no error. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t dsn_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dsn_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSNORM_H */
