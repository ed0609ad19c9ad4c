#ifndef SPIDER_RECON_H
#define SPIDER_RECON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpiderStatus {
  SPIDER_STATUS_OK = 0,
  SPIDER_STATUS_NULL_POINTER = 1,
  SPIDER_STATUS_INVALID_ARGUMENT = 2,
  SPIDER_STATUS_IO = 3,
  SPIDER_STATUS_FORMAT = 4,
  SPIDER_STATUS_COMPUTE = 5,
  SPIDER_STATUS_MISSING_LABELS = 6,
  SPIDER_STATUS_PANIC = 7,
} SpiderStatus;

// A trained field.
typedef struct SpiderModel SpiderModel;

// An intensity grid with optional labels.
typedef struct SpiderVolume SpiderVolume;

// Geometry and output layout of a loaded model.
typedef struct SpiderModelInfo {
  size_t volume_dims[3];
  double volume_spacing[3];
  size_t pa_detector[2];
  size_t lat_detector[2];
  // Softmax channels, background included.
  size_t classes;
} SpiderModelInfo;

// Scores of a prediction against ground truth. `mean_dice` is NaN when the
// prediction has no labels.
typedef struct SpiderMetrics {
  double psnr;
  double ssim;
  double mean_dice;
} SpiderMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *spider_version(void);

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on this thread.
const char *spider_last_error_message(void);

// Loads a checkpoint. Its recorded training precision selects the arithmetic.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum SpiderStatus spider_model_load(const char *path, struct SpiderModel **out);

// # Safety
// `model` must be null or a handle from [`spider_model_load`] not yet freed.
void spider_model_free(struct SpiderModel *model);

// # Safety
// `model` must be a live handle and `info` a writable pointer.
enum SpiderStatus spider_model_info(const struct SpiderModel *model, struct SpiderModelInfo *info);

// Reconstructs from two log-domain detector images (u fastest), each sized
// to the model's detector. Zero `nx`, `ny` and `nz` select the model's grid.
//
// # Safety
// `model` must be a live handle, `pa`/`lat` readable for `pa_len`/`lat_len`
// doubles and `out` a writable pointer.
enum SpiderStatus spider_model_reconstruct(const struct SpiderModel *model,
                                           const double *pa,
                                           size_t pa_len,
                                           const double *lat,
                                           size_t lat_len,
                                           size_t nx,
                                           size_t ny,
                                           size_t nz,
                                           struct SpiderVolume **out);

// As [`spider_model_reconstruct`], reading both projections from files
// written by the command-line simulator.
//
// # Safety
// `model` must be a live handle, the paths NUL-terminated strings and `out`
// a writable pointer.
enum SpiderStatus spider_model_reconstruct_files(const struct SpiderModel *model,
                                                 const char *pa_path,
                                                 const char *lat_path,
                                                 size_t nx,
                                                 size_t ny,
                                                 size_t nz,
                                                 struct SpiderVolume **out);

// Loads an intensity grid and, when `labels_path` is not null, its labels.
//
// # Safety
// `intensity_path` must be a NUL-terminated string, `labels_path` null or
// one, and `out` a writable pointer.
enum SpiderStatus spider_volume_load(const char *intensity_path,
                                     const char *labels_path,
                                     struct SpiderVolume **out);

// Writes the intensity grid and, when `labels_path` is not null, the labels.
//
// # Safety
// `volume` must be a live handle and the paths as in [`spider_volume_load`].
enum SpiderStatus spider_volume_save(const struct SpiderVolume *volume,
                                     const char *intensity_path,
                                     const char *labels_path);

// # Safety
// `volume` must be a live handle and `nx`, `ny`, `nz` writable pointers.
enum SpiderStatus spider_volume_dims(const struct SpiderVolume *volume,
                                     size_t *nx,
                                     size_t *ny,
                                     size_t *nz);

// Copies the intensities (x fastest, then y, then z) into `dst`, which must
// hold exactly `nx·ny·nz` floats.
//
// # Safety
// `volume` must be a live handle and `dst` writable for `len` floats.
enum SpiderStatus spider_volume_copy_intensity(const struct SpiderVolume *volume,
                                               float *dst,
                                               size_t len);

// Copies the labels into `dst`, which must hold exactly `nx·ny·nz` values.
//
// # Safety
// `volume` must be a live handle and `dst` writable for `len` values.
enum SpiderStatus spider_volume_copy_labels(const struct SpiderVolume *volume,
                                            uint16_t *dst,
                                            size_t len);

// Scores `pred` against `truth`, which must carry labels.
//
// # Safety
// `pred` and `truth` must be live handles and `metrics` a writable pointer.
enum SpiderStatus spider_volume_evaluate(const struct SpiderVolume *pred,
                                         const struct SpiderVolume *truth,
                                         struct SpiderMetrics *metrics);

// # Safety
// `volume` must be null or a handle not yet freed.
void spider_volume_free(struct SpiderVolume *volume);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIDER_RECON_H */
