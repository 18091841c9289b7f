#ifndef UVCGAN2_H
#define UVCGAN2_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Uvcgan2Status {
  UVCGAN2_STATUS_OK = 0,
  UVCGAN2_STATUS_NULL_POINTER = 1,
  UVCGAN2_STATUS_INVALID_ARGUMENT = 2,
  UVCGAN2_STATUS_SHAPE = 3,
  UVCGAN2_STATUS_CONFIG = 4,
  UVCGAN2_STATUS_CHECKPOINT = 5,
  UVCGAN2_STATUS_MISSING = 6,
  UVCGAN2_STATUS_IO = 7,
  UVCGAN2_STATUS_NON_FINITE = 8,
  UVCGAN2_STATUS_INTERNAL = 9,
  UVCGAN2_STATUS_PANIC = 10,
} Uvcgan2Status;

/**
 * Translation direction of a generator in a checkpoint.
 */
typedef enum Uvcgan2Direction {
  UVCGAN2_DIRECTION_A_TO_B = 0,
  UVCGAN2_DIRECTION_B_TO_A = 1,
} Uvcgan2Direction;

/**
 * Opaque generator handle.
 */
typedef struct Uvcgan2Generator Uvcgan2Generator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *uvcgan2_version(void);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *uvcgan2_last_error(void);

/**
 * Loads one generator from a pretraining or training checkpoint. With
 * `use_ema` the averaged weights of a training checkpoint are used.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum Uvcgan2Status uvcgan2_generator_load(const char *path,
                                          enum Uvcgan2Direction direction,
                                          bool use_ema,
                                          struct Uvcgan2Generator **out);

/**
 * Input channels, output channels and square image size of a generator.
 *
 * # Safety
 * `g` must come from [`uvcgan2_generator_load`]; the out pointers must be writable.
 */
enum Uvcgan2Status uvcgan2_generator_shape(const struct Uvcgan2Generator *g,
                                           size_t *in_channels,
                                           size_t *out_channels,
                                           size_t *image_size);

/**
 * Translates `count` images stored as `[count, in_channels, size, size]`
 * floats in `[-1, 1]` into `output` laid out as `[count, out_channels, size, size]`.
 *
 * # Safety
 * `input` and `output` must hold the stated number of floats and must not overlap.
 */
enum Uvcgan2Status uvcgan2_generator_translate(const struct Uvcgan2Generator *g,
                                               const float *input,
                                               size_t count,
                                               float *output);

/**
 * Releases a generator. Null is ignored.
 *
 * # Safety
 * `g` must come from [`uvcgan2_generator_load`] and not be used afterwards.
 */
void uvcgan2_generator_free(struct Uvcgan2Generator *g);

/**
 * FID between two row-major feature sets of `dim` columns.
 *
 * # Safety
 * `x` holds `nx * dim` values, `y` holds `ny * dim`, `out` is writable.
 */
enum Uvcgan2Status uvcgan2_fid(const double *x,
                               size_t nx,
                               const double *y,
                               size_t ny,
                               size_t dim,
                               double *out);

/**
 * KID mean and standard deviation over `n_subsets` subsets of `subset_size`
 * rows, using the paired unbiased estimator.
 *
 * # Safety
 * `x` holds `nx * dim` values, `y` holds `ny * dim`, the out pointers are writable.
 */
enum Uvcgan2Status uvcgan2_kid(const double *x,
                               size_t nx,
                               const double *y,
                               size_t ny,
                               size_t dim,
                               size_t subset_size,
                               size_t n_subsets,
                               uint64_t seed,
                               double *out_mean,
                               double *out_std);

/**
 * PSNR in dB between two planar `[channels, height, width]` images in `[0, 1]`.
 *
 * # Safety
 * `a` and `b` hold `channels * height * width` values, `out` is writable.
 */
enum Uvcgan2Status uvcgan2_psnr(const double *a,
                                const double *b,
                                size_t channels,
                                size_t height,
                                size_t width,
                                double *out);

/**
 * Mean SSIM between two planar `[channels, height, width]` images in `[0, 1]`.
 *
 * # Safety
 * `a` and `b` hold `channels * height * width` values, `out` is writable.
 */
enum Uvcgan2Status uvcgan2_ssim(const double *a,
                                const double *b,
                                size_t channels,
                                size_t height,
                                size_t width,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UVCGAN2_H */
