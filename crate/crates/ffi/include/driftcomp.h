#ifndef DRIFTCOMP_H
#define DRIFTCOMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_ARGUMENT = 2,
  DC_STATUS_IO = 3,
  DC_STATUS_PARSE = 4,
  DC_STATUS_FORMAT = 5,
  DC_STATUS_CONFIG = 6,
  DC_STATUS_SINGULAR = 7,
  DC_STATUS_DIVERGENCE = 8,
  DC_STATUS_PANIC = 9,
} DcStatus;

/**
 * A calibration matrix and offset.
 */
typedef struct DcCalibration DcCalibration;

/**
 * Streaming compensator state for one sensor.
 */
typedef struct DcCompensator DcCompensator;

/**
 * A loaded drift model.
 */
typedef struct DcModel DcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *dc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dc_version(void);

/**
 * Loads a model file written by `driftcomp train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DcStatus dc_model_load(const char *path, struct DcModel **out);

/**
 * Parses a model from an in-memory JSON document.
 *
 * # Safety
 * `json` must point to `len` readable bytes; `out` must be writable.
 */
enum DcStatus dc_model_from_json(const char *json, size_t len, struct DcModel **out);

/**
 * # Safety
 * `m` must be NULL or a handle from this library not yet freed.
 */
void dc_model_free(struct DcModel *m);

/**
 * Window length the model expects; 0 for a NULL handle.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t dc_model_window(const struct DcModel *m);

/**
 * Family tag (`lsm`, `mlp`, `mlp-seq`, `tcn`, `gru`) as a static string, or
 * NULL for a NULL handle.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
const char *dc_model_family(const struct DcModel *m);

/**
 * Predicts drift for a temperature window, oldest sample first. Writes six
 * values (N, N, N, N·m, N·m, N·m) to `out_drift`.
 *
 * # Safety
 * `temps` must point to `len` doubles and `out_drift` to six writable
 * doubles.
 */
enum DcStatus dc_model_predict(const struct DcModel *m,
                               const double *temps,
                               size_t len,
                               double *out_drift);

/**
 * Default diagonal calibration from the sensor's full-scale ranges.
 *
 * # Safety
 * `out` must be writable.
 */
enum DcStatus dc_calibration_default(struct DcCalibration **out);

/**
 * Calibration from a row-major 6×6 matrix and a 6-vector offset.
 *
 * # Safety
 * `matrix` must point to 36 doubles, `offset` to 6, `out` must be writable.
 */
enum DcStatus dc_calibration_new(const double *matrix,
                                 const double *offset,
                                 struct DcCalibration **out);

/**
 * Loads a calibration document.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DcStatus dc_calibration_load(const char *path, struct DcCalibration **out);

/**
 * # Safety
 * `c` must be NULL or a handle from this library not yet freed.
 */
void dc_calibration_free(struct DcCalibration *c);

/**
 * Converts six raw ADC counts to a wrench.
 *
 * # Safety
 * `adc` must point to six ints and `out_wrench` to six writable doubles.
 */
enum DcStatus dc_calibration_apply(const struct DcCalibration *c,
                                   const int32_t *adc,
                                   double *out_wrench);

/**
 * Creates a streaming compensator. `calib` may be NULL for the default
 * calibration; it is copied, so the caller keeps ownership. The model is
 * shared and may be freed independently.
 *
 * # Safety
 * `model` must be a live handle, `calib` NULL or a live handle, `out`
 * writable.
 */
enum DcStatus dc_compensator_new(const struct DcModel *model,
                                 const struct DcCalibration *calib,
                                 struct DcCompensator **out);

/**
 * # Safety
 * `c` must be NULL or a handle from this library not yet freed.
 */
void dc_compensator_free(struct DcCompensator *c);

/**
 * Clears the temperature history.
 *
 * # Safety
 * `c` must be a live handle.
 */
enum DcStatus dc_compensator_reset(struct DcCompensator *c);

/**
 * Pushes one frame. Writes the compensated wrench and the predicted drift,
 * six doubles each; either output pointer may be NULL to skip it.
 *
 * # Safety
 * `c` must be a live handle, `adc` must point to six ints, and non-NULL
 * outputs to six writable doubles.
 */
enum DcStatus dc_compensator_push(struct DcCompensator *c,
                                  double time_s,
                                  const int32_t *adc,
                                  double temp_c,
                                  double *out_compensated,
                                  double *out_drift);

/**
 * Frames pushed since creation or the last reset.
 *
 * # Safety
 * `c` must be NULL or a live handle.
 */
uint64_t dc_compensator_count(const struct DcCompensator *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTCOMP_H */
