#ifndef FDGAN_H
#define FDGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdganStatus {
  FDGAN_STATUS_OK = 0,
  FDGAN_STATUS_INVALID_ARGUMENT = 1,
  FDGAN_STATUS_SHAPE = 2,
  FDGAN_STATUS_GEOMETRY = 3,
  FDGAN_STATUS_IO = 4,
  FDGAN_STATUS_FORMAT = 5,
  FDGAN_STATUS_INSUFFICIENT_DATA = 6,
  FDGAN_STATUS_DIVERGED = 7,
  FDGAN_STATUS_PANIC = 8,
} FdganStatus;

// A trained generator.
typedef struct FdganGenerator FdganGenerator;

// A calibrated face matcher.
typedef struct FdganMatcher FdganMatcher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message of the last failed call on this thread, or NULL. The
// pointer stays valid until the next call into this library on the same
// thread.
const char *fdgan_last_error(void);

// Morphs two `width × height` faces. Each landmark array holds `n` points
// (68, 65 or 85). `out` receives `width * height * 3` bytes.
//
// # Safety
// All pointers must be valid for the sizes described above.
enum FdganStatus fdgan_morph(const uint8_t *image1,
                             const double *landmarks1,
                             size_t n1,
                             const uint8_t *image2,
                             const double *landmarks2,
                             size_t n2,
                             uint32_t width,
                             uint32_t height,
                             double alpha,
                             double beta,
                             uint8_t *out);

// Loads a generator checkpoint into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FdganStatus fdgan_generator_load(const char *path, struct FdganGenerator **out);

// Side length of the square images the generator expects, or 0 for NULL.
//
// # Safety
// `g` must be NULL or a live handle.
uint32_t fdgan_generator_image_size(const struct FdganGenerator *g);

// Restores the accomplice from the criminal's `aux` image and the morph.
// All three buffers hold `size * size * 3` bytes.
//
// # Safety
// `g` must be a live handle and the buffers valid for the size above.
enum FdganStatus fdgan_demorph(const struct FdganGenerator *g,
                               const uint8_t *aux,
                               const uint8_t *morphed,
                               uint8_t *out);

// # Safety
// `g` must be NULL or a handle from [`fdgan_generator_load`], freed once.
void fdgan_generator_free(struct FdganGenerator *g);

// Loads a matcher checkpoint into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FdganStatus fdgan_matcher_load(const char *path, struct FdganMatcher **out);

// Side length the matcher's encoder sees, or 0 for NULL. Faces whose side
// is a multiple of it are box-downsampled before scoring.
//
// # Safety
// `m` must be NULL or a live handle.
uint32_t fdgan_matcher_image_size(const struct FdganMatcher *m);

// Similarity of two `size * size` RGB8 faces; `size` must be a multiple
// of [`fdgan_matcher_image_size`].
//
// # Safety
// `m` must be a live handle, both images `size * size * 3` bytes and `out`
// a valid pointer.
enum FdganStatus fdgan_matcher_score(const struct FdganMatcher *m,
                                     const uint8_t *image1,
                                     const uint8_t *image2,
                                     uint32_t size,
                                     double *out);

// The calibrated decision threshold; `-inf` accepts every pair.
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum FdganStatus fdgan_matcher_threshold(const struct FdganMatcher *m, double *out);

// # Safety
// `m` must be NULL or a handle from [`fdgan_matcher_load`], freed once.
void fdgan_matcher_free(struct FdganMatcher *m);

// Threshold for a false accept rate `far` over `n` impostor scores.
//
// # Safety
// `scores` must hold `n` doubles and `out` be a valid pointer.
enum FdganStatus fdgan_calibrate_threshold(const double *scores, size_t n, double far, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FDGAN_H */
