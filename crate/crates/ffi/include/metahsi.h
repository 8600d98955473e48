#ifndef METAHSI_H
#define METAHSI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum MhsiStatus {
  MHSI_OK = 0,
  MHSI_NULL_POINTER = 1,
  MHSI_INVALID_ARGUMENT = 2,
  MHSI_SHAPE_MISMATCH = 3,
  MHSI_IO = 4,
  MHSI_FORMAT = 5,
  MHSI_NUMERICAL = 6,
  MHSI_BUDGET_EXCEEDED = 7,
  MHSI_PANIC = 8,
} MhsiStatus;

/**
 * Hyperspectral cube, `height x width x bands`, band index fastest.
 */
typedef struct MhsiCube MhsiCube;

/**
 * Spectral library.
 */
typedef struct MhsiDataset MhsiDataset;

/**
 * Periodic filter mosaic sized to a sensor.
 */
typedef struct MhsiFilters MhsiFilters;

/**
 * Single-exposure sensor reading.
 */
typedef struct MhsiMeasurement MhsiMeasurement;

/**
 * Trained unfolding network.
 */
typedef struct MhsiModel MhsiModel;

/**
 * Chosen filter subset.
 */
typedef struct MhsiSelection MhsiSelection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *mhsi_last_error_message(void);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *mhsi_status_name(enum MhsiStatus status);

/**
 * Library version, static and NUL-terminated.
 */
const char *mhsi_version(void);

/**
 * Synthetic library of `n` spectra on `bands` uniform bands.
 * `g_max` bounds the step between adjacent bands, `r_min` the dynamic range.
 */
enum MhsiStatus mhsi_dataset_generate(size_t n,
                                      size_t bands,
                                      uint64_t seed,
                                      double g_max,
                                      double r_min,
                                      struct MhsiDataset **out);

enum MhsiStatus mhsi_dataset_load(const char *file, struct MhsiDataset **out);

enum MhsiStatus mhsi_dataset_save(const struct MhsiDataset *ds, const char *file);

/**
 * Number of spectra and bands.
 */
enum MhsiStatus mhsi_dataset_shape(const struct MhsiDataset *ds, size_t *n, size_t *bands);

void mhsi_dataset_free(struct MhsiDataset *ds);

/**
 * Greedy minimum-correlation selection of `k` filters.
 */
enum MhsiStatus mhsi_select_fps(const struct MhsiDataset *ds,
                                size_t k,
                                bool use_abs,
                                struct MhsiSelection **out);

/**
 * Exhaustive minimum over all `k`-subsets; fails when there are too many.
 */
enum MhsiStatus mhsi_select_oracle(const struct MhsiDataset *ds,
                                   size_t k,
                                   struct MhsiSelection **out);

enum MhsiStatus mhsi_selection_load(const char *file, struct MhsiSelection **out);

enum MhsiStatus mhsi_selection_save(const struct MhsiSelection *sel, const char *file);

/**
 * Copies the chosen dataset rows into `indices[0..k]`; `capacity` must be
 * at least `k`. `k` and the largest pairwise |correlation| are reported.
 */
enum MhsiStatus mhsi_selection_info(const struct MhsiSelection *sel,
                                    size_t *indices,
                                    size_t capacity,
                                    size_t *k,
                                    double *max_offdiag);

void mhsi_selection_free(struct MhsiSelection *sel);

/**
 * Tiles the selection as a `period x period` mosaic over `height x width`.
 */
enum MhsiStatus mhsi_filters_from_selection(const struct MhsiSelection *sel,
                                            size_t height,
                                            size_t width,
                                            size_t period,
                                            struct MhsiFilters **out);

/**
 * Mosaic from raw transmittances: `period * period` rows of `bands`
 * values, tile position `(i, j)` at row `i * period + j`.
 */
enum MhsiStatus mhsi_filters_new(const double *theta,
                                 size_t bands,
                                 size_t height,
                                 size_t width,
                                 size_t period,
                                 struct MhsiFilters **out);

void mhsi_filters_free(struct MhsiFilters *f);

/**
 * Copies `height * width * bands` values, band index fastest.
 */
enum MhsiStatus mhsi_cube_new(size_t height,
                              size_t width,
                              size_t bands,
                              const double *data,
                              struct MhsiCube **out);

enum MhsiStatus mhsi_cube_load(const char *file, struct MhsiCube **out);

enum MhsiStatus mhsi_cube_save(const struct MhsiCube *cube, const char *file);

enum MhsiStatus mhsi_cube_dims(const struct MhsiCube *cube,
                               size_t *height,
                               size_t *width,
                               size_t *bands);

/**
 * Copies the cube into `buffer`, which must hold `capacity >= h * w * bands`.
 */
enum MhsiStatus mhsi_cube_read(const struct MhsiCube *cube, double *buffer, size_t capacity);

void mhsi_cube_free(struct MhsiCube *cube);

/**
 * Snapshot reading with Gaussian noise of std `sigma` drawn from `seed`.
 */
enum MhsiStatus mhsi_encode(const struct MhsiCube *cube,
                            const struct MhsiFilters *filters,
                            double sigma,
                            uint64_t seed,
                            struct MhsiMeasurement **out);

enum MhsiStatus mhsi_measurement_load(const char *file, struct MhsiMeasurement **out);

enum MhsiStatus mhsi_measurement_save(const struct MhsiMeasurement *m, const char *file);

void mhsi_measurement_free(struct MhsiMeasurement *m);

/**
 * Per-pixel initial estimate from the reading alone.
 */
enum MhsiStatus mhsi_init_estimate(const struct MhsiMeasurement *m,
                                   const struct MhsiFilters *filters,
                                   struct MhsiCube **out);

/**
 * `stages` gradient steps of size `rho`, each followed by soft thresholding.
 */
enum MhsiStatus mhsi_reconstruct_classical(const struct MhsiMeasurement *m,
                                           const struct MhsiFilters *filters,
                                           size_t stages,
                                           double rho,
                                           double threshold,
                                           struct MhsiCube **out);

/**
 * Loads an ERP1 checkpoint; the shape arguments must match training.
 */
enum MhsiStatus mhsi_model_load(const char *file,
                                size_t bands,
                                size_t channels,
                                size_t stages,
                                size_t reduction,
                                size_t queries,
                                bool shared,
                                struct MhsiModel **out);

enum MhsiStatus mhsi_model_reconstruct(const struct MhsiModel *model,
                                       const struct MhsiMeasurement *m,
                                       const struct MhsiFilters *filters,
                                       struct MhsiCube **out);

void mhsi_model_free(struct MhsiModel *model);

/**
 * PSNR in dB for peak `max_val`; +inf for identical cubes.
 */
enum MhsiStatus mhsi_psnr(const struct MhsiCube *x,
                          const struct MhsiCube *reference,
                          double max_val,
                          double *out);

/**
 * Band-averaged SSIM.
 */
enum MhsiStatus mhsi_ssim(const struct MhsiCube *x, const struct MhsiCube *reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METAHSI_H */
