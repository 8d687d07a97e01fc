/* C interface to the lightmux multiplexed-illumination toolkit. */

#ifndef LIGHTMUX_H
#define LIGHTMUX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirroring the CLI exit-code contract.
 */
typedef enum LmxStatus {
  /**
   * Success.
   */
  LmxOk = 0,
  /**
   * I/O or other runtime failure.
   */
  LmxErrRuntime = 1,
  /**
   * Invalid argument or configuration.
   */
  LmxErrInvalid = 2,
  /**
   * Numerical failure (ill-conditioning, degenerate fit).
   */
  LmxErrNumerical = 3,
  /**
   * Null pointer passed where an object was required.
   */
  LmxErrNullPointer = 4,
} LmxStatus;

/**
 * Opaque illumination matrix.
 */
typedef struct LmxMatrix LmxMatrix;

/**
 * Opaque relightable scene model.
 */
typedef struct LmxModel LmxModel;

/**
 * Opaque calibrated noise model.
 */
typedef struct LmxNoiseModel LmxNoiseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to
 * `len`). Returns the full message length in bytes, excluding the NUL.
 */
size_t lmx_last_error(char *buf, size_t len);

/**
 * Create a noise model from its affine parameters at a reference setting.
 */
enum LmxStatus lmx_noise_model_new(double sigma_p2,
                                   double sigma_r2,
                                   double gain_db,
                                   double exposure_ms,
                                   struct LmxNoiseModel **out);

/**
 * Load a noise model from the key-value file written by the calibrator.
 */
enum LmxStatus lmx_noise_model_load(const char *path, struct LmxNoiseModel **out);

/**
 * Re-reference the model's parameters to another gain/exposure setting.
 */
enum LmxStatus lmx_noise_model_generalize(const struct LmxNoiseModel *model,
                                          double gain_db,
                                          double exposure_ms,
                                          struct LmxNoiseModel **out);

/**
 * Read the affine parameters (photon slope, read-noise intercept).
 */
enum LmxStatus lmx_noise_model_params(const struct LmxNoiseModel *model,
                                      double *sigma_p2,
                                      double *sigma_r2);

void lmx_noise_model_free(struct LmxNoiseModel *model);

/**
 * Build a matrix from a row-major `n x m` buffer of weights in [0,1].
 */
enum LmxStatus lmx_matrix_new(size_t n,
                              size_t m,
                              const double *row_major,
                              bool binary,
                              struct LmxMatrix **out);

/**
 * Load a matrix from its CSV form.
 */
enum LmxStatus lmx_matrix_load_csv(const char *path, struct LmxMatrix **out);

/**
 * Number of illuminants (rows) and acquisitions (columns).
 */
enum LmxStatus lmx_matrix_dims(const struct LmxMatrix *matrix, size_t *n, size_t *m);

/**
 * Predicted per-illuminant demultiplexing MSE under the noise model, for an
 * average scene reflectance `r_bar` in gray levels.
 */
enum LmxStatus lmx_matrix_predicted_mse(const struct LmxMatrix *matrix,
                                        const struct LmxNoiseModel *noise,
                                        double r_bar,
                                        double *out_mse);

/**
 * Stochastic search for the matrix minimizing predicted demultiplexing MSE.
 */
enum LmxStatus lmx_matrix_optimize_snr(size_t n,
                                       size_t m,
                                       const struct LmxNoiseModel *noise,
                                       double r_bar,
                                       size_t iterations,
                                       uint64_t seed,
                                       bool binary,
                                       size_t restarts,
                                       struct LmxMatrix **out);

void lmx_matrix_free(struct LmxMatrix *matrix);

/**
 * Load a relightable model directory (manifest + per-illuminant images).
 */
enum LmxStatus lmx_model_load(const char *dir_path, struct LmxModel **out);

/**
 * Image width, height, and illuminant count of a loaded model.
 */
enum LmxStatus lmx_model_dims(const struct LmxModel *model,
                              size_t *width,
                              size_t *height,
                              size_t *num_illuminants);

void lmx_model_free(struct LmxModel *model);

/**
 * Render the noise-free mean image under per-illuminant `weights`
 * (length = illuminant count) into `out_pixels` (length = width*height,
 * row-major gray levels).
 */
enum LmxStatus lmx_render_clean(const struct LmxModel *model,
                                const double *weights,
                                size_t weights_len,
                                double gain_db,
                                double exposure_ms,
                                double *out_pixels);

/**
 * Render with calibrated noise, clipping, and quantization; deterministic
 * for a given seed.
 */
enum LmxStatus lmx_render_noisy(const struct LmxModel *model,
                                const double *weights,
                                size_t weights_len,
                                double gain_db,
                                double exposure_ms,
                                const struct LmxNoiseModel *noise,
                                uint64_t seed,
                                double gray_max,
                                double *out_pixels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIGHTMUX_H */
