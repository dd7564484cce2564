/* SPDX-License-Identifier: Apache-2.0 */

#ifndef SMALLOBJ_H
#define SMALLOBJ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmallobjStatus {
  SMALLOBJ_STATUS_OK = 0,
  SMALLOBJ_STATUS_NULL_ARGUMENT = 1,
  SMALLOBJ_STATUS_INVALID_UTF8 = 2,
  SMALLOBJ_STATUS_IO = 3,
  SMALLOBJ_STATUS_PARSE = 4,
  SMALLOBJ_STATUS_INVALID_ARGUMENT = 5,
  SMALLOBJ_STATUS_INVALID_DATA = 6,
  SMALLOBJ_STATUS_PANIC = 7,
} SmallobjStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SmallobjDataset SmallobjDataset;

typedef struct SmallobjBox {
  double x;
  double y;
  double w;
  double h;
} SmallobjBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *smallobj_last_error(void);

/**
 * Loads a COCO annotation file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum SmallobjStatus smallobj_dataset_load(const char *path, struct SmallobjDataset **out);

/**
 * # Safety
 * `ds` must come from [`smallobj_dataset_load`] and not be freed twice.
 */
void smallobj_dataset_free(struct SmallobjDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; the out pointers must be writable.
 */
enum SmallobjStatus smallobj_dataset_counts(const struct SmallobjDataset *ds,
                                            uintptr_t *images,
                                            uintptr_t *annotations);

/**
 * Per-size-class statistics as JSON with the default anchor layout.
 * `size_basis` is 0 for mask area, 1 for bbox area. A non-positive
 * `iou_threshold` keeps the default.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable. Free the result with
 * [`smallobj_string_free`].
 */
enum SmallobjStatus smallobj_dataset_statistics_json(const struct SmallobjDataset *ds,
                                                     double iou_threshold,
                                                     uint32_t size_basis,
                                                     char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void smallobj_string_free(char *s);

/**
 * 0 small, 1 medium, 2 large; -1 for a NaN or negative area.
 */
int32_t smallobj_classify_area(double area);

/**
 * IoU of two `(x, y, w, h)` boxes; 0 if either pointer is null.
 *
 * # Safety
 * Non-null pointers must be readable.
 */
double smallobj_box_iou(const struct SmallobjBox *a, const struct SmallobjBox *b);

/**
 * Column-major run counts to the compact COCO string form.
 *
 * # Safety
 * `counts` must point to `len` readable values; `out` must be writable.
 */
enum SmallobjStatus smallobj_rle_encode_string(const uint32_t *counts,
                                               uintptr_t len,
                                               uint32_t height,
                                               uint32_t width,
                                               char **out);

/**
 * Compact COCO string back to run counts.
 *
 * # Safety
 * `s` must be nul-terminated; out pointers must be writable. Free the
 * array with [`smallobj_counts_free`].
 */
enum SmallobjStatus smallobj_rle_decode_string(const char *s,
                                               uint32_t height,
                                               uint32_t width,
                                               uint32_t **counts,
                                               uintptr_t *len);

/**
 * # Safety
 * `counts` and `len` must come from [`smallobj_rle_decode_string`].
 */
void smallobj_counts_free(uint32_t *counts, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMALLOBJ_H */
