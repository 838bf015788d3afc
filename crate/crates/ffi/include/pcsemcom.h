#ifndef PCSEMCOM_H
#define PCSEMCOM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PcsStatus {
  PCS_STATUS_OK = 0,
  PCS_STATUS_NULL_POINTER = 1,
  PCS_STATUS_INVALID_ARGUMENT = 2,
  PCS_STATUS_IO = 3,
  PCS_STATUS_PARSE = 4,
  PCS_STATUS_SHAPE = 5,
  PCS_STATUS_DEGENERATE = 6,
  PCS_STATUS_CHECKPOINT = 7,
  PCS_STATUS_CONFIG = 8,
  PCS_STATUS_NUMERIC = 9,
  PCS_STATUS_PANIC = 10,
} PcsStatus;

/**
 * A point cloud.
 */
typedef struct PcsCloud PcsCloud;

/**
 * A trained model restored from a checkpoint.
 */
typedef struct PcsModel PcsModel;

/**
 * Quality of a reconstruction against its reference. Infinite PSNR is
 * reported as IEEE infinity.
 */
typedef struct PcsQuality {
  double d1_psnr_db;
  double d2_psnr_db;
  double d1_psnr_symmetric_db;
  double d2_psnr_symmetric_db;
  double e_c2c;
  double e_c2p;
  double peak;
} PcsQuality;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *pcs_last_error(void);

/**
 * Bits per channel use at `snr_db`.
 */
double pcs_capacity(double snr_db);

/**
 * Channel symbols needed to deliver `bits` losslessly.
 *
 * # Safety
 * `out_symbols` must be valid for writes.
 */
enum PcsStatus pcs_lossless_budget(uint64_t bits, double snr_db, double p, uint64_t *out_symbols);

/**
 * Builds a cloud from `n` interleaved `x, y, z` triples.
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles; `out` must be valid for
 * writes.
 */
enum PcsStatus pcs_cloud_new(const double *xyz, size_t n, struct PcsCloud **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum PcsStatus pcs_cloud_load_ply(const char *path, struct PcsCloud **out);

/**
 * # Safety
 * `cloud` must come from this library; `path` must be NUL-terminated.
 */
enum PcsStatus pcs_cloud_save_ply(const struct PcsCloud *cloud, const char *path);

/**
 * Number of points, or 0 for NULL.
 *
 * # Safety
 * `cloud` must be NULL or come from this library.
 */
size_t pcs_cloud_len(const struct PcsCloud *cloud);

/**
 * Copies the coordinates into `xyz`, which holds `capacity` doubles.
 *
 * # Safety
 * `cloud` must come from this library; `xyz` must be valid for `capacity`
 * writes.
 */
enum PcsStatus pcs_cloud_copy_xyz(const struct PcsCloud *cloud, double *xyz, size_t capacity);

/**
 * # Safety
 * `cloud` must be NULL or come from this library and not be used again.
 */
void pcs_cloud_free(struct PcsCloud *cloud);

/**
 * D1/D2 quality of `b` against reference `a`.
 *
 * # Safety
 * Both clouds must come from this library; `out` must be valid for writes.
 */
enum PcsStatus pcs_evaluate(const struct PcsCloud *a,
                            const struct PcsCloud *b,
                            size_t normal_k,
                            struct PcsQuality *out);

/**
 * Restores a model from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid for writes.
 */
enum PcsStatus pcs_model_load(const char *path, struct PcsModel **out);

/**
 * Points per cloud the model expects, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t pcs_model_points(const struct PcsModel *model);

/**
 * Sends `cloud` through the model at `snr_db` (infinity for a clean
 * channel) with noise drawn from `seed`, returning the reconstruction.
 *
 * # Safety
 * Handles must come from this library; `out` must be valid for writes.
 */
enum PcsStatus pcs_model_transmit(const struct PcsModel *model,
                                  const struct PcsCloud *cloud,
                                  double snr_db,
                                  uint64_t seed,
                                  struct PcsCloud **out);

/**
 * # Safety
 * `model` must be NULL or come from this library and not be used again.
 */
void pcs_model_free(struct PcsModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCSEMCOM_H */
