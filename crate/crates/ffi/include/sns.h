#ifndef SNS_H
#define SNS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SnsStatus {
  SNS_STATUS_OK = 0,
  SNS_STATUS_NULL_POINTER = 1,
  SNS_STATUS_INVALID_ARGUMENT = 2,
  SNS_STATUS_IO = 3,
  SNS_STATUS_AUDIT_FAILURE = 4,
  SNS_STATUS_CALIBRATION_FAILURE = 5,
  SNS_STATUS_REFUSED = 6,
  SNS_STATUS_PANIC = 7,
  SNS_STATUS_VERIFICATION_FAILED = 8,
} SnsStatus;

/**
 * Opaque spectral field handle.
 */
typedef struct SnsField SnsField;

/**
 * Opaque grid handle.
 */
typedef struct SnsGrid SnsGrid;

/**
 * Opaque dyadic partition handle.
 */
typedef struct SnsPartition SnsPartition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sns_last_error_message(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum SnsStatus sns_grid_new(size_t dimension,
                            size_t points_per_axis,
                            double box_length,
                            struct SnsGrid **out);

/**
 * # Safety
 * `grid` must come from `sns_grid_new` and not be freed twice.
 */
void sns_grid_free(struct SnsGrid *grid);

/**
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_partition_new(const struct SnsGrid *grid, struct SnsPartition **out);

/**
 * # Safety
 * `partition` must come from `sns_partition_new` and not be freed twice.
 */
void sns_partition_free(struct SnsPartition *partition);

/**
 * Shell range `[j_min, j_max]` and the partition-of-unity residual on
 * the resolvable band.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_partition_info(const struct SnsPartition *partition,
                                  int32_t *j_min,
                                  int32_t *j_max,
                                  double *residual);

/**
 * Taylor-Green vortex of amplitude `amplitude` and wavenumber `k`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_field_taylor_green(const struct SnsGrid *grid,
                                      double amplitude,
                                      double k,
                                      struct SnsField **out);

/**
 * Seeded divergence-free Gaussian field with the given RMS velocity.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_field_gaussian(const struct SnsGrid *grid,
                                  double amplitude_rms,
                                  double correlation_length,
                                  uint64_t seed,
                                  struct SnsField **out);

/**
 * Builds a vector field from physical samples laid out component-major,
 * row-major within a component (`dimension · n^dimension` values).
 *
 * # Safety
 * `values` must point to `len` readable doubles.
 */
enum SnsStatus sns_field_from_physical(const struct SnsGrid *grid,
                                       const double *values,
                                       size_t len,
                                       struct SnsField **out);

/**
 * Writes physical samples in the layout of [`sns_field_from_physical`].
 *
 * # Safety
 * `values` must point to `len` writable doubles.
 */
enum SnsStatus sns_field_to_physical(const struct SnsField *field, double *values, size_t len);

/**
 * # Safety
 * `field` must come from an `sns_field_*` constructor and not be freed twice.
 */
void sns_field_free(struct SnsField *field);

/**
 * Leray projection into a new field.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_field_leray_project(const struct SnsField *field, struct SnsField **out);

/**
 * `e^{tΔ}u` into a new field.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_field_heat(const struct SnsField *field, double t, struct SnsField **out);

/**
 * `L²` norm of the field and of its divergence.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_field_norms(const struct SnsField *field, double *l2, double *divergence_l2);

/**
 * Homogeneous Besov norm `‖u‖_{Ḃ^s_{p,r}}` with finite `p, r ≥ 2`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SnsStatus sns_besov_norm(const struct SnsField *field,
                              const struct SnsPartition *partition,
                              double s,
                              double p,
                              double r,
                              double *out);

/**
 * # Safety
 * `out` must be valid.
 */
enum SnsStatus sns_theta1(double x, double radius, double *out);

/**
 * # Safety
 * `out` must be valid.
 */
enum SnsStatus sns_theta2(double x, double n, double *out);

/**
 * Runs the verification suites for a config file. Returns
 * `SNS_STATUS_VERIFICATION_FAILED` when any suite fails.
 *
 * # Safety
 * `config_path` must be a NUL-terminated UTF-8 path.
 */
enum SnsStatus sns_verify(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SNS_H */
