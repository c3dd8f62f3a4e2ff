#ifndef FAIRTRIAGE_H
#define FAIRTRIAGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FtStatus {
  FT_STATUS_OK = 0,
  FT_STATUS_NULL_POINTER = 1,
  FT_STATUS_INVALID_ARGUMENT = 2,
  FT_STATUS_PARSE = 3,
  FT_STATUS_IO = 4,
  FT_STATUS_LENGTH_MISMATCH = 5,
  FT_STATUS_SINGLE_CLASS = 6,
  FT_STATUS_NON_FINITE = 7,
  FT_STATUS_PANIC = 99,
} FtStatus;

/**
 * Opaque fitted model.
 */
typedef struct FtModel FtModel;

/**
 * Opaque feature schema.
 */
typedef struct FtSchema FtSchema;

/**
 * Result of a two-proportion z-test.
 */
typedef struct FtZTest {
  double z_abs;
  double p_value;
  bool significant;
} FtZTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ft_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ft_version(void);

/**
 * Standard normal CDF.
 */
double ft_normal_cdf(double x);

/**
 * Two-proportion z-test with unpooled variance.
 *
 * # Safety
 * `out` must be a valid pointer or null.
 */
enum FtStatus ft_ztest(double p1,
                       size_t n1,
                       double p2,
                       size_t n2,
                       double alpha,
                       struct FtZTest *out);

/**
 * Area under the ROC curve.
 *
 * # Safety
 * `y` and `scores` must hold `n` elements; `out` must be valid.
 */
enum FtStatus ft_auc(const uint8_t *y, const double *scores, size_t n, double *out);

/**
 * Observed score maximising F1 (ties to the lowest threshold).
 *
 * # Safety
 * `y` and `scores` must hold `n` elements; `out` must be valid.
 */
enum FtStatus ft_select_threshold_f1(const uint8_t *y, const double *scores, size_t n, double *out);

/**
 * Fit a model described by `spec_json` (e.g. `{"kind":"logistic_regression"}`).
 * `weights` may be null for unit weights.
 *
 * # Safety
 * `x` must hold `rows * cols` values, `y` and non-null `weights` `rows`
 * values; `out` must be valid.
 */
enum FtStatus ft_model_fit(const char *spec_json,
                           const double *x,
                           size_t rows,
                           size_t cols,
                           const uint8_t *y,
                           const double *weights,
                           struct FtModel **out);

/**
 * Load a model saved by the command line tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum FtStatus ft_model_load(const char *path, struct FtModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum FtStatus ft_model_save(const struct FtModel *model, const char *path);

/**
 * Number of input columns the model expects.
 *
 * # Safety
 * `model` must come from this library; `out` must be valid.
 */
enum FtStatus ft_model_n_features(const struct FtModel *model, size_t *out);

/**
 * Positive-class probabilities for `rows` records into `out`.
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` room for `rows`.
 */
enum FtStatus ft_model_predict_proba(const struct FtModel *model,
                                     const double *x,
                                     size_t rows,
                                     size_t cols,
                                     double *out);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used again.
 */
void ft_model_free(struct FtModel *model);

/**
 * Load a feature schema JSON file; a null `path` gives the bundled schema.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` must be valid.
 */
enum FtStatus ft_schema_load(const char *path, struct FtSchema **out);

/**
 * # Safety
 * `schema` must come from this library; `out` must be valid.
 */
enum FtStatus ft_schema_feature_count(const struct FtSchema *schema, size_t *out);

/**
 * # Safety
 * `schema` must be null or come from this library, and not be used again.
 */
void ft_schema_free(struct FtSchema *schema);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRTRIAGE_H */
