#ifndef NERFEDIT_H
#define NERFEDIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum NerfeditStatus {
  NERFEDIT_STATUS_OK = 0,
  NERFEDIT_STATUS_NULL_POINTER = 1,
  NERFEDIT_STATUS_INVALID_ARGUMENT = 2,
  NERFEDIT_STATUS_SHAPE_MISMATCH = 3,
  NERFEDIT_STATUS_CONFIG = 4,
  NERFEDIT_STATUS_CHECKPOINT = 5,
  NERFEDIT_STATUS_NOT_FOUND = 6,
  NERFEDIT_STATUS_IO = 7,
  NERFEDIT_STATUS_BUFFER_TOO_SMALL = 8,
  NERFEDIT_STATUS_NON_FINITE = 9,
  NERFEDIT_STATUS_UNAVAILABLE = 10,
  NERFEDIT_STATUS_INTERNAL = 11,
} NerfeditStatus;

/**
 * Opaque handle to a checkpoint and its embedder.
 */
typedef struct NerfeditModel NerfeditModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nerfedit_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nerfedit_last_error(char *buf, size_t len);

/**
 * Load a checkpoint file and the embedder it was trained against.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NerfeditStatus nerfedit_model_load(const char *path, struct NerfeditModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `nerfedit_model_load` and not be used afterwards.
 */
void nerfedit_model_free(struct NerfeditModel *model);

/**
 * Length of each of the shape and appearance codes.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum NerfeditStatus nerfedit_model_code_dim(const struct NerfeditModel *model, size_t *out);

/**
 * Whether the checkpoint carries trained edit mappers.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum NerfeditStatus nerfedit_model_has_mappers(const struct NerfeditModel *model, bool *out);

/**
 * Draw standard normal codes deterministically from `seed`.
 *
 * # Safety
 * `shape_out` and `appearance_out` must each hold `len` doubles.
 */
enum NerfeditStatus nerfedit_sample_codes(const struct NerfeditModel *model,
                                          uint64_t seed,
                                          double *shape_out,
                                          double *appearance_out,
                                          size_t len);

/**
 * Render a square RGB8 view at the given camera angles (radians) into
 * `rgb_out`, which must hold `resolution * resolution * 3` bytes.
 *
 * # Safety
 * Code pointers must hold `len` doubles; `rgb_out` must hold `rgb_len` bytes.
 */
enum NerfeditStatus nerfedit_render(const struct NerfeditModel *model,
                                    const double *shape,
                                    const double *appearance,
                                    size_t len,
                                    double azimuth,
                                    double elevation,
                                    size_t resolution,
                                    uint8_t *rgb_out,
                                    size_t rgb_len);

/**
 * Move codes toward a text prompt: `z + scale * direction` on the chosen
 * channel (a `NerfeditChannel` value). Output buffers may alias the inputs.
 *
 * # Safety
 * Code pointers must hold `len` doubles; `prompt` must be NUL-terminated.
 */
enum NerfeditStatus nerfedit_edit_text(const struct NerfeditModel *model,
                                       const double *shape,
                                       const double *appearance,
                                       size_t len,
                                       const char *prompt,
                                       uint32_t channel,
                                       double scale,
                                       double *shape_out,
                                       double *appearance_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NERFEDIT_H */
