#ifndef GAIT_FFI_H
#define GAIT_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GaitPooling {
  GAIT_POOLING_MAX = 0,
  GAIT_POOLING_MEAN = 1,
} GaitPooling;

typedef enum GaitStatus {
  GAIT_STATUS_OK = 0,
  GAIT_STATUS_NULL_POINTER = 1,
  GAIT_STATUS_INVALID_ARGUMENT = 2,
  GAIT_STATUS_SHAPE = 3,
  GAIT_STATUS_IO = 4,
  GAIT_STATUS_FORMAT = 5,
  GAIT_STATUS_DATA = 6,
  GAIT_STATUS_NON_FINITE = 7,
  GAIT_STATUS_PANIC = 8,
} GaitStatus;

/**
 * Fused feature of one sequence.
 */
typedef struct GaitFeature GaitFeature;

/**
 * Network weights plus configuration.
 */
typedef struct GaitModel GaitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gait_last_error(void);

/**
 * Fresh weights for the given layer widths.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum GaitStatus gait_model_init(size_t input_size,
                                size_t conv1_channels,
                                size_t conv2_channels,
                                size_t mcnn_channels,
                                enum GaitPooling pooling,
                                uint64_t seed,
                                struct GaitModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` as in [`gait_model_init`].
 */
enum GaitStatus gait_model_load(const char *path, struct GaitModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum GaitStatus gait_model_save(const struct GaitModel *model, const char *path);

/**
 * Side length frames are resized to before embedding.
 *
 * # Safety
 * `model` must come from this library.
 */
enum GaitStatus gait_model_input_size(const struct GaitModel *model, size_t *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void gait_model_free(struct GaitModel *model);

/**
 * Embeds the PNG frames of a directory, in file name order.
 *
 * # Safety
 * `model` must come from this library, `dir` must be NUL-terminated and
 * `out` writable.
 */
enum GaitStatus gait_embed_dir(const struct GaitModel *model,
                               const char *dir,
                               struct GaitFeature **out);

/**
 * Embeds `frame_count` row-major 8-bit frames of `height x width`
 * stored back to back. Pixels at or above 128 are foreground.
 *
 * # Safety
 * `pixels` must point to `frame_count * height * width` bytes.
 */
enum GaitStatus gait_embed_frames(const struct GaitModel *model,
                                  const uint8_t *pixels,
                                  size_t frame_count,
                                  size_t height,
                                  size_t width,
                                  struct GaitFeature **out);

/**
 * Number of values in the feature maps.
 *
 * # Safety
 * `feature` must come from this library.
 */
enum GaitStatus gait_feature_len(const struct GaitFeature *feature, size_t *out);

/**
 * Writes `[channels, height, width]` of the feature maps to `shape`.
 *
 * # Safety
 * `shape` must have room for three values.
 */
enum GaitStatus gait_feature_shape(const struct GaitFeature *feature, size_t *shape);

/**
 * Copies the feature maps into `buf`, which must hold exactly
 * [`gait_feature_len`] values.
 *
 * # Safety
 * `buf` must point to `len` writable floats.
 */
enum GaitStatus gait_feature_copy(const struct GaitFeature *feature, float *buf, size_t len);

/**
 * # Safety
 * `feature` must be null or a handle not yet freed.
 */
void gait_feature_free(struct GaitFeature *feature);

/**
 * Probability that two features come from the same subject.
 *
 * # Safety
 * All handles must come from this library.
 */
enum GaitStatus gait_compare(const struct GaitModel *model,
                             const struct GaitFeature *a,
                             const struct GaitFeature *b,
                             double *p_same);

/**
 * Equal error rate in percent.
 *
 * # Safety
 * The score arrays must hold the given counts.
 */
enum GaitStatus gait_eer(const double *genuine,
                         size_t genuine_len,
                         const double *impostor,
                         size_t impostor_len,
                         double *out);

/**
 * Rank-k identification rate in percent over a row-major
 * `rows x cols` score matrix; row `r` matches column `genuine[r]`.
 *
 * # Safety
 * `scores` must hold `rows * cols` values and `genuine` `rows` indices.
 */
enum GaitStatus gait_rank_k(const double *scores,
                            size_t rows,
                            size_t cols,
                            const size_t *genuine,
                            size_t k,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAIT_FFI_H */
