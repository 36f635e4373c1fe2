#ifndef DISSIM_H
#define DISSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DissimStatus {
  DISSIM_STATUS_OK = 0,
  DISSIM_STATUS_NULL_POINTER = 1,
  DISSIM_STATUS_INVALID_INPUT = 2,
  DISSIM_STATUS_TRAINING = 3,
  DISSIM_STATUS_INTERNAL = 4,
  DISSIM_STATUS_BUFFER_TOO_SMALL = 5,
  DISSIM_STATUS_UNDEFINED_METRIC = 6,
  DISSIM_STATUS_PANIC = 7,
} DissimStatus;

/**
 * Opaque detector handle.
 */
typedef struct DissimDetector DissimDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dissim_version(void);

/**
 * Message of the last failed call on this thread, or "" after a success.
 * Valid until the next dissim call on the same thread.
 */
const char *dissim_last_error(void);

/**
 * Load a detector checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DissimStatus dissim_detector_load(const char *path, struct DissimDetector **out);

/**
 * Release a detector. Null is ignored.
 *
 * # Safety
 * `det` must come from [`dissim_detector_load`] and not be used afterwards.
 */
void dissim_detector_free(struct DissimDetector *det);

/**
 * Patch side length `P` the detector expects.
 *
 * # Safety
 * `det` must be a live handle; `out` must be writable.
 */
enum DissimStatus dissim_detector_patch_size(const struct DissimDetector *det, size_t *out);

/**
 * Scores per pair: 1 for patch-level heads, `P*P` for per-pixel heads.
 *
 * # Safety
 * `det` must be a live handle; `out` must be writable.
 */
enum DissimStatus dissim_detector_outputs_per_pair(const struct DissimDetector *det, size_t *out);

/**
 * Score `n_pairs` aligned patch pairs.
 *
 * `real` and `synthetic` hold `n_pairs` patches of interleaved 8-bit RGB,
 * `P*P*3` bytes each. `labels` holds the class ids of the synthetic patches
 * (`P*P` bytes each); it is required by the transfer and discriminator heads
 * and may be null otherwise. `out` receives `n_pairs * outputs_per_pair`
 * scores in [0, 1].
 *
 * # Safety
 * Pointers must be valid for the sizes above; `out` for `out_len` floats.
 */
enum DissimStatus dissim_detector_score(const struct DissimDetector *det,
                                        const uint8_t *real,
                                        const uint8_t *synthetic,
                                        const uint8_t *labels,
                                        size_t n_pairs,
                                        float *out,
                                        size_t out_len);

/**
 * Area under the ROC curve; `labels` are 0 (negative) or nonzero
 * (positive).
 *
 * # Safety
 * `scores` and `labels` must be valid for `n` reads; `out` writable.
 */
enum DissimStatus dissim_roc_auc(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out);

/**
 * Fraction of positions where two label arrays of length `n` differ.
 *
 * # Safety
 * `a` and `b` must be valid for `n` reads; `out` writable.
 */
enum DissimStatus dissim_semantic_difference(const uint8_t *a,
                                             const uint8_t *b,
                                             size_t n,
                                             double *out);

/**
 * Per-pixel Shannon entropy (nats) of `n_pixels` distributions over
 * `n_classes` classes, stored pixel-major. Rows must sum to 1.
 *
 * # Safety
 * `probs` must be valid for `n_pixels * n_classes` reads and `out` for
 * `n_pixels` writes.
 */
enum DissimStatus dissim_entropy(const float *probs,
                                 size_t n_pixels,
                                 size_t n_classes,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISSIM_H */
