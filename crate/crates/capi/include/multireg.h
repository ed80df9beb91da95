#ifndef MULTIREG_H
#define MULTIREG_H

/* Generated by cbindgen from the multireg-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_ARGUMENT = 1,
  MR_STATUS_INVALID_ARGUMENT = 2,
  MR_STATUS_IO = 3,
  MR_STATUS_PANIC = 4,
} MrStatus;

/**
 * Values accepted in [`MrConfig::weighting`].
 */
typedef enum MrWeighting {
  MR_WEIGHTING_NONE = 0,
  MR_WEIGHTING_INTENSITY = 1,
  MR_WEIGHTING_GRADIENT = 2,
  MR_WEIGHTING_FULL = 3,
} MrWeighting;

/**
 * Opaque displacement field handle.
 */
typedef struct MrField MrField;

/**
 * Opaque label volume handle.
 */
typedef struct MrLabels MrLabels;

/**
 * Opaque scalar volume handle.
 */
typedef struct MrVolume MrVolume;

/**
 * Plain-data mirror of the engine configuration. Obtain defaults from
 * [`mr_config_default`], then override fields as needed.
 */
typedef struct MrConfig {
  /**
   * Number of resolution levels (>= 1).
   */
  size_t levels;
  /**
   * Descent iterations per stage.
   */
  size_t iters;
  /**
   * Initial step length in voxels of the current level.
   */
  double step;
  /**
   * Smoothness weight.
   */
  double lambda;
  /**
   * One of the [`MrWeighting`] values.
   */
  uint32_t weighting;
  double gain;
  double bias;
  /**
   * True integrates each increment as a stationary velocity.
   */
  bool diff;
  /**
   * Scaling-and-squaring steps used when `diff` is set.
   */
  uint32_t squaring_steps;
  /**
   * Correlation window edge (odd), or 0 for global correlation.
   */
  size_t ncc_window;
} MrConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, as a
 * NUL-terminated string. Never null; empty before any failure.
 */
const char *mr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mr_version(void);

/**
 * Frees a string returned through a `char **` out-parameter.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void mr_string_free(char *s);

/**
 * Fills `out` with the library defaults.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MrStatus mr_config_default(struct MrConfig *out);

/**
 * Copies `nx*ny*nz` samples into a new scalar volume; a null `data`
 * yields zeros.
 *
 * # Safety
 * `data`, when non-null, must point at `nx*ny*nz` readable floats.
 */
enum MrStatus mr_volume_create(size_t nx,
                               size_t ny,
                               size_t nz,
                               float sx,
                               float sy,
                               float sz,
                               const float *data,
                               struct MrVolume **out);

/**
 * Reads a scalar volume from a file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` valid for writes.
 */
enum MrStatus mr_volume_read(const char *path, struct MrVolume **out);

/**
 * Writes a scalar volume to a file.
 *
 * # Safety
 * Pointers must be valid; `path` NUL-terminated.
 */
enum MrStatus mr_volume_write(const struct MrVolume *v, const char *path);

/**
 * Stores the grid dimensions into `nx`, `ny`, `nz`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_volume_dims(const struct MrVolume *v, size_t *nx, size_t *ny, size_t *nz);

/**
 * Stores the voxel spacing into `sx`, `sy`, `sz`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_volume_spacing(const struct MrVolume *v, float *sx, float *sy, float *sz);

/**
 * Borrow of the sample buffer (`nx*ny*nz` floats, x fastest). Null if
 * the handle is null; dies with the handle.
 *
 * # Safety
 * `v` must be a valid handle or null.
 */
const float *mr_volume_data(const struct MrVolume *v);

/**
 * Releases a scalar volume handle; null is ignored.
 *
 * # Safety
 * `v` must come from this library and not be freed twice.
 */
void mr_volume_free(struct MrVolume *v);

/**
 * Copies `nx*ny*nz` labels into a new label volume; a null `data`
 * yields all-background.
 *
 * # Safety
 * `data`, when non-null, must point at `nx*ny*nz` readable u16 values.
 */
enum MrStatus mr_labels_create(size_t nx,
                               size_t ny,
                               size_t nz,
                               float sx,
                               float sy,
                               float sz,
                               const uint16_t *data,
                               struct MrLabels **out);

/**
 * Reads a label volume from a file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` valid for writes.
 */
enum MrStatus mr_labels_read(const char *path, struct MrLabels **out);

/**
 * Writes a label volume to a file.
 *
 * # Safety
 * Pointers must be valid; `path` NUL-terminated.
 */
enum MrStatus mr_labels_write(const struct MrLabels *v, const char *path);

/**
 * Stores the grid dimensions into `nx`, `ny`, `nz`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_labels_dims(const struct MrLabels *v, size_t *nx, size_t *ny, size_t *nz);

/**
 * Stores the voxel spacing into `sx`, `sy`, `sz`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_labels_spacing(const struct MrLabels *v, float *sx, float *sy, float *sz);

/**
 * Borrow of the label buffer (`nx*ny*nz` u16 values, x fastest). Null
 * if the handle is null; dies with the handle.
 *
 * # Safety
 * `v` must be a valid handle or null.
 */
const uint16_t *mr_labels_data(const struct MrLabels *v);

/**
 * Releases a label volume handle; null is ignored.
 *
 * # Safety
 * `v` must come from this library and not be freed twice.
 */
void mr_labels_free(struct MrLabels *v);

/**
 * Copies `3*nx*ny*nz` components (three per voxel) into a new field; a
 * null `data` yields the identity (zero) field.
 *
 * # Safety
 * `data`, when non-null, must point at `3*nx*ny*nz` readable floats.
 */
enum MrStatus mr_field_create(size_t nx,
                              size_t ny,
                              size_t nz,
                              float sx,
                              float sy,
                              float sz,
                              const float *data,
                              struct MrField **out);

/**
 * Reads a displacement field from a file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` valid for writes.
 */
enum MrStatus mr_field_read(const char *path, struct MrField **out);

/**
 * Writes a displacement field to a file.
 *
 * # Safety
 * Pointers must be valid; `path` NUL-terminated.
 */
enum MrStatus mr_field_write(const struct MrField *v, const char *path);

/**
 * Stores the grid dimensions into `nx`, `ny`, `nz`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_field_dims(const struct MrField *v, size_t *nx, size_t *ny, size_t *nz);

/**
 * Stores the voxel spacing into `sx`, `sy`, `sz`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_field_spacing(const struct MrField *v, float *sx, float *sy, float *sz);

/**
 * Borrow of the component buffer (`3*nx*ny*nz` floats: ux, uy, uz per
 * voxel, x fastest). Null if the handle is null; dies with the handle.
 *
 * # Safety
 * `v` must be a valid handle or null.
 */
const float *mr_field_data(const struct MrField *v);

/**
 * Releases a displacement field handle; null is ignored.
 *
 * # Safety
 * `v` must come from this library and not be freed twice.
 */
void mr_field_free(struct MrField *v);

/**
 * Registers `moving` onto `fixed`, producing the displacement field
 * and, when `out_json` is non-null, the full report as a JSON string.
 * Label handles are optional but must be given as a pair; they enable
 * overlap tracking in the report.
 *
 * # Safety
 * Non-null pointers must be valid for the call.
 */
enum MrStatus mr_register(const struct MrVolume *fixed,
                          const struct MrVolume *moving,
                          const struct MrLabels *fixed_labels,
                          const struct MrLabels *moving_labels,
                          const struct MrConfig *config,
                          struct MrField **out_field,
                          char **out_json);

/**
 * Resamples a scalar volume through a displacement field.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_warp_volume(const struct MrVolume *moving,
                             const struct MrField *field,
                             struct MrVolume **out);

/**
 * Resamples a label volume through a displacement field with
 * nearest-neighbor lookups.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_warp_labels(const struct MrLabels *moving,
                             const struct MrField *field,
                             struct MrLabels **out);

/**
 * Compares label volumes and summarizes field regularity; the report
 * is returned as a JSON string through `out_json`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_evaluate(const struct MrLabels *fixed_labels,
                          const struct MrLabels *warped_labels,
                          const struct MrField *field,
                          char **out_json);

/**
 * Stores the smallest local deformation-Jacobian determinant and the
 * fraction of voxels where it is non-positive.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MrStatus mr_field_jacobian(const struct MrField *field,
                                double *min_det,
                                double *frac_nonpositive);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIREG_H */
