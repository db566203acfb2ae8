#ifndef RELPROP_H
#define RELPROP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Cut-off value meaning "no flat layers".
 */
#define RELPROP_CUTOFF_NONE -1

/**
 * Cut-off value meaning "flat up to the largest receptive field".
 */
#define RELPROP_CUTOFF_RECEPTIVE_FIELD -2

typedef enum RelpropStatus {
  RELPROP_STATUS_OK = 0,
  RELPROP_STATUS_NULL_POINTER = 1,
  RELPROP_STATUS_INVALID_ARGUMENT = 2,
  RELPROP_STATUS_IO = 3,
  RELPROP_STATUS_PARSE = 4,
  RELPROP_STATUS_SHAPE = 5,
  RELPROP_STATUS_NUMERICAL = 6,
  RELPROP_STATUS_DATA = 7,
  RELPROP_STATUS_PANIC = 8,
} RelpropStatus;

typedef enum RelpropRuleKind {
  RELPROP_RULE_KIND_BASIC = 0,
  RELPROP_RULE_KIND_EPSILON = 1,
  RELPROP_RULE_KIND_ALPHA_BETA = 2,
  RELPROP_RULE_KIND_FLAT = 3,
  RELPROP_RULE_KIND_W_SQUARED = 4,
} RelpropRuleKind;

typedef enum RelpropMode {
  RELPROP_MODE_FINE = 0,
  RELPROP_MODE_COARSE = 1,
} RelpropMode;

/**
 * Opaque Fisher Vector model.
 */
typedef struct RelpropFvModel RelpropFvModel;

/**
 * Opaque pixel relevance map, `height x width`, row major.
 */
typedef struct RelpropMap RelpropMap;

/**
 * Opaque network model.
 */
typedef struct RelpropNnModel RelpropNnModel;

/**
 * Rule selection. `epsilon` is read only for the epsilon rule, `alpha` and
 * `beta` only for the alpha-beta rule.
 */
typedef struct RelpropRule {
  enum RelpropRuleKind kind;
  double epsilon;
  double alpha;
  double beta;
} RelpropRule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *relprop_version(void);

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *relprop_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RelpropStatus relprop_nn_model_load(const char *path, struct RelpropNnModel **out);

/**
 * # Safety
 * `model` must come from `relprop_nn_model_load` or be null.
 */
void relprop_nn_model_free(struct RelpropNnModel *model);

/**
 * Writes the input shape (channels, height, width) and class count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RelpropStatus relprop_nn_model_shape(const struct RelpropNnModel *model,
                                          size_t *channels,
                                          size_t *height,
                                          size_t *width,
                                          size_t *classes);

/**
 * Class scores for a `channels x height x width` input.
 *
 * # Safety
 * `input` must hold `input_len` values and `scores` room for `scores_len`.
 */
enum RelpropStatus relprop_nn_forward(const struct RelpropNnModel *model,
                                      const double *input,
                                      size_t input_len,
                                      double *scores,
                                      size_t scores_len);

/**
 * Pixel relevance of `class` for one input.
 *
 * # Safety
 * `input` must hold `input_len` values; `rule` and `out` must be valid.
 */
enum RelpropStatus relprop_nn_explain(const struct RelpropNnModel *model,
                                      const double *input,
                                      size_t input_len,
                                      size_t class_,
                                      const struct RelpropRule *rule,
                                      int32_t cutoff,
                                      struct RelpropMap **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RelpropStatus relprop_fv_model_load(const char *path, struct RelpropFvModel **out);

/**
 * # Safety
 * `model` must come from `relprop_fv_model_load` or be null.
 */
void relprop_fv_model_free(struct RelpropFvModel *model);

/**
 * # Safety
 * `model` and `classes` must be valid.
 */
enum RelpropStatus relprop_fv_model_classes(const struct RelpropFvModel *model, size_t *classes);

/**
 * Pixel relevance of `class` for a grayscale image with values in `[0, 1]`.
 *
 * # Safety
 * `pixels` must hold `width * height` values; `out` must be valid.
 */
enum RelpropStatus relprop_fv_explain(const struct RelpropFvModel *model,
                                      const double *pixels,
                                      size_t width,
                                      size_t height,
                                      size_t class_,
                                      enum RelpropMode mode,
                                      double epsilon,
                                      struct RelpropMap **out);

/**
 * # Safety
 * `map` must come from an explain call or be null.
 */
void relprop_map_free(struct RelpropMap *map);

/**
 * # Safety
 * All pointers must be valid.
 */
enum RelpropStatus relprop_map_dims(const struct RelpropMap *map, size_t *width, size_t *height);

/**
 * Copies the map, row major, into `buf` which must hold exactly
 * `width * height` values.
 *
 * # Safety
 * `buf` must have room for `len` values.
 */
enum RelpropStatus relprop_map_data(const struct RelpropMap *map, double *buf, size_t len);

/**
 * # Safety
 * `map` and `sum` must be valid.
 */
enum RelpropStatus relprop_map_sum(const struct RelpropMap *map, double *sum);

/**
 * Renders the map with the default colormap and writes a binary PPM.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum RelpropStatus relprop_map_write_ppm(const struct RelpropMap *map, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELPROP_H */
