#ifndef SAGE_LOD_H
#define SAGE_LOD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SageStatus {
  SAGE_STATUS_OK = 0,
  SAGE_STATUS_NULL_ARGUMENT = 1,
  SAGE_STATUS_INVALID_ARGUMENT = 2,
  SAGE_STATUS_FORMAT = 3,
  SAGE_STATUS_IO = 4,
  SAGE_STATUS_INSUFFICIENT_DATA = 5,
  SAGE_STATUS_DEGENERATE_FIT = 6,
  SAGE_STATUS_COMPOSITION = 7,
  SAGE_STATUS_PANIC = 8,
} SageStatus;

typedef enum SageSelectionMode {
  SAGE_SELECTION_MODE_EMPIRICAL = 0,
  SAGE_SELECTION_MODE_MODEL = 1,
} SageSelectionMode;

/**
 * Opaque splat cloud.
 */
typedef struct SageCloud SageCloud;

/**
 * Opaque selection plan.
 */
typedef struct SagePlan SagePlan;

/**
 * Opaque quality profile.
 */
typedef struct SageProfile SageProfile;

/**
 * Two-regime curve; `beta` is +inf for single-regime fits.
 */
typedef struct SageCurve {
  double k1;
  double gamma1;
  double mu1;
  double alpha1;
  double k2;
  double gamma2;
  double mu2;
  double alpha2;
  double beta;
  double rmse;
  size_t n_points;
} SageCurve;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Free with
 * [`sage_string_free`].
 */
char *sage_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sage_string_free(char *s);

/**
 * Bytes occupied by `count` gaussians (248 each).
 */
uint64_t sage_occupancy_bytes(uint64_t count);

/**
 * Reads a 3DGS PLY file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SageStatus sage_cloud_read(const char *path, struct SageCloud **out);

/**
 * # Safety
 * `cloud` must be a live handle; `out` must be writable.
 */
enum SageStatus sage_cloud_len(const struct SageCloud *cloud, size_t *out);

/**
 * # Safety
 * `cloud` must be a live handle; `out` must be writable.
 */
enum SageStatus sage_cloud_sh_degree(const struct SageCloud *cloud, uint8_t *out);

/**
 * # Safety
 * `cloud` must be a live handle; `path` a NUL-terminated string.
 */
enum SageStatus sage_cloud_write(const struct SageCloud *cloud, const char *path);

/**
 * # Safety
 * `cloud` must come from this library (or be NULL) and not be freed twice.
 */
void sage_cloud_free(struct SageCloud *cloud);

/**
 * Fits the two-regime curve to `n` (distance, ssim) pairs.
 *
 * # Safety
 * `d` and `ssim` must point to `n` doubles; `out` must be writable.
 */
enum SageStatus sage_fit_curve(const double *d,
                               const double *ssim,
                               size_t n,
                               struct SageCurve *out);

/**
 * Predicted SSIM at distance `d`, clamped to [0, 1]; NaN for a NULL curve.
 *
 * # Safety
 * `curve` must be NULL or point to a valid struct.
 */
double sage_predict_ssim(const struct SageCurve *curve, double d);

/**
 * SSIM of two interleaved RGB float images of the same size.
 *
 * # Safety
 * `a` and `b` must each point to `3 * width * height` floats.
 */
enum SageStatus sage_ssim(const float *a,
                          const float *b,
                          uint32_t width,
                          uint32_t height,
                          double *out);

/**
 * Loads a profile written by `sage-lod profile` (JSON).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SageStatus sage_profile_read(const char *path, struct SageProfile **out);

/**
 * # Safety
 * `profile` must come from this library (or be NULL) and not be freed twice.
 */
void sage_profile_free(struct SageProfile *profile);

/**
 * Selects one iteration per label for `view`. Model mode fits curves
 * from the profile first.
 *
 * # Safety
 * `profile` must be a live handle, `view` a NUL-terminated string and
 * `out` writable.
 */
enum SageStatus sage_select(const struct SageProfile *profile,
                            const char *view,
                            double target,
                            enum SageSelectionMode mode,
                            struct SagePlan **out);

/**
 * Total gaussians of a plan; 0 for NULL.
 *
 * # Safety
 * `plan` must be NULL or a live handle.
 */
uint64_t sage_plan_total_gaussians(const struct SagePlan *plan);

/**
 * Total bytes of a plan; 0 for NULL.
 *
 * # Safety
 * `plan` must be NULL or a live handle.
 */
uint64_t sage_plan_total_bytes(const struct SagePlan *plan);

/**
 * Chosen iteration for `label`; `fallback` is set when no checkpoint met
 * the target.
 *
 * # Safety
 * `plan` must be a live handle; `iteration` and `fallback` writable.
 */
enum SageStatus sage_plan_choice(const struct SagePlan *plan,
                                 uint8_t label,
                                 uint32_t *iteration,
                                 bool *fallback);

/**
 * Plan as JSON. Free with [`sage_string_free`]; NULL on failure.
 *
 * # Safety
 * `plan` must be NULL or a live handle.
 */
char *sage_plan_to_json(const struct SagePlan *plan);

/**
 * # Safety
 * `plan` must come from this library (or be NULL) and not be freed twice.
 */
void sage_plan_free(struct SagePlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAGE_LOD_H */
