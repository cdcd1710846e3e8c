#ifndef SEMISENT_H
#define SEMISENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SemisentStatus {
  SEMISENT_STATUS_OK = 0,
  SEMISENT_STATUS_NULL_POINTER = 1,
  SEMISENT_STATUS_INVALID_ARGUMENT = 2,
  SEMISENT_STATUS_DIMENSION = 3,
  SEMISENT_STATUS_CONFIG = 4,
  SEMISENT_STATUS_STAGE = 5,
  SEMISENT_STATUS_CORRUPT = 6,
  SEMISENT_STATUS_VERSION = 7,
  SEMISENT_STATUS_PARSE = 8,
  SEMISENT_STATUS_DATA = 9,
  SEMISENT_STATUS_NON_FINITE = 10,
  SEMISENT_STATUS_IO = 11,
  SEMISENT_STATUS_BUFFER_TOO_SMALL = 12,
  SEMISENT_STATUS_PANIC = 13,
} SemisentStatus;

/**
 * Opaque model handle.
 */
typedef struct SemisentModel SemisentModel;

/**
 * Recall, precision and F1 of one average.
 */
typedef struct SemisentScores {
  double recall;
  double precision;
  double f1;
} SemisentScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *semisent_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *semisent_version(void);

/**
 * Loads a model file. On success `*out` owns a handle that must be released
 * with [`semisent_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SemisentStatus semisent_model_load(const char *path, struct SemisentModel **out);

/**
 * Releases a handle from [`semisent_model_load`]. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void semisent_model_free(struct SemisentModel *model);

/**
 * Number of output classes, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t semisent_model_num_classes(const struct SemisentModel *model);

/**
 * Features per frame expected by [`semisent_model_forward`], or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t semisent_model_input_dim(const struct SemisentModel *model);

/**
 * Stage tag (`fresh`, `theta_p`, `theta_f`, ...), owned by the handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
const char *semisent_model_stage(const struct SemisentModel *model);

/**
 * Runs the classifier on a row-major `frames` matrix of `t × d` values.
 * Writes `num_classes` logits into `logits` and, when `attention` is
 * non-NULL, `t` attention weights into it.
 *
 * # Safety
 * `frames` must hold `t * d` doubles, `logits` `logits_len` doubles and
 * `attention` (if non-NULL) `attention_len` doubles.
 */
enum SemisentStatus semisent_model_forward(const struct SemisentModel *model,
                                           const double *frames,
                                           size_t t,
                                           size_t d,
                                           double *logits,
                                           size_t logits_len,
                                           double *attention,
                                           size_t attention_len);

/**
 * Majority vote over three labels (0 Negative, 1 Neutral, 2 Positive).
 * `*out` is the winning label, or -1 when all three differ.
 *
 * # Safety
 * `labels` must point to 3 values and `out` be valid.
 */
enum SemisentStatus semisent_majority_vote(const int32_t *labels, int32_t *out);

/**
 * Unweighted (macro) and weighted averages from a row-major `classes ×
 * classes` confusion matrix, rows gold and columns predicted.
 *
 * # Safety
 * `counts` must hold `classes * classes` values; the output pointers must be
 * valid.
 */
enum SemisentStatus semisent_metrics_from_counts(const uint64_t *counts,
                                                 size_t classes,
                                                 struct SemisentScores *unweighted,
                                                 struct SemisentScores *weighted);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMISENT_H */
