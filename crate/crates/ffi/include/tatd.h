#ifndef TATD_H
#define TATD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TatdStatus {
  TATD_STATUS_OK = 0,
  TATD_STATUS_NULL_ARGUMENT = 1,
  TATD_STATUS_INVALID_ARGUMENT = 2,
  TATD_STATUS_IO = 3,
  TATD_STATUS_PARSE = 4,
  TATD_STATUS_DATA = 5,
  TATD_STATUS_SHAPE = 6,
  TATD_STATUS_NUMERIC = 7,
  TATD_STATUS_CHECKPOINT = 8,
  TATD_STATUS_PANIC = 9,
} TatdStatus;

typedef enum TatdStrategy {
  TATD_STRATEGY_ALS_ADAM = 0,
  TATD_STRATEGY_ADAM = 1,
  TATD_STRATEGY_SGD = 2,
  TATD_STRATEGY_ALS_SGD = 3,
  TATD_STRATEGY_ALT_ADAM = 4,
} TatdStrategy;

/**
 * Opaque fitted model with its normalization statistics.
 */
typedef struct TatdModel TatdModel;

/**
 * Opaque sparse tensor.
 */
typedef struct TatdTensor TatdTensor;

/**
 * Training settings. Start from `tatd_config_default()`.
 */
typedef struct TatdConfig {
  size_t rank;
  size_t window;
  double sigma;
  double lambda_t;
  double lambda_r;
  double learning_rate;
  size_t max_outer;
  size_t max_inner;
  size_t patience;
  enum TatdStrategy strategy;
  /**
   * Scale smoothing by per-slice sparsity.
   */
  bool sparsity_penalty;
  uint64_t seed;
} TatdConfig;

/**
 * Outcome of `tatd_fit`. Errors are in the normalized scale; multiply by
 * `norm_std` for the original scale.
 */
typedef struct TatdFitSummary {
  size_t iterations;
  /**
   * One-based; 0 when no iteration ran.
   */
  size_t best_iteration;
  double val_rmse;
  double test_rmse;
  double test_mae;
  double norm_mean;
  double norm_std;
} TatdFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or null when
 * there was none. The pointer stays valid until the next failing call on
 * the same thread.
 */
const char *tatd_last_error_message(void);

struct TatdConfig tatd_config_default(void);

/**
 * Reads a delimited tensor file (indices then value on each line).
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum TatdStatus tatd_tensor_load(const char *path,
                                 size_t order,
                                 size_t time_mode,
                                 bool one_based,
                                 struct TatdTensor **out);

/**
 * Builds a tensor from coordinate arrays. `indices` holds `nnz * order`
 * zero-based indices, entry by entry.
 *
 * # Safety
 * Array arguments must be valid for the stated lengths and `out` writable.
 */
enum TatdStatus tatd_tensor_from_coo(size_t order,
                                     const size_t *dims,
                                     size_t time_mode,
                                     size_t nnz,
                                     const size_t *indices,
                                     const double *values,
                                     struct TatdTensor **out);

/**
 * Number of stored entries; 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t tatd_tensor_nnz(const struct TatdTensor *tensor);

/**
 * # Safety
 * `tensor` must be null or a handle not yet freed.
 */
void tatd_tensor_free(struct TatdTensor *tensor);

/**
 * Normalizes the tensor, splits it into train, validation and test parts
 * using `config.seed`, fits a model on the training part and evaluates it.
 * `summary` may be null.
 *
 * # Safety
 * `tensor` and `config` must be live, `out` writable, `summary` null or
 * writable.
 */
enum TatdStatus tatd_fit(const struct TatdTensor *tensor,
                         const struct TatdConfig *config,
                         struct TatdModel **out,
                         struct TatdFitSummary *summary);

/**
 * Predicts `count` entries in the original scale. `indices` holds
 * `count * order` zero-based indices.
 *
 * # Safety
 * `model` must be live and the arrays valid for the stated lengths.
 */
enum TatdStatus tatd_model_predict(const struct TatdModel *model,
                                   size_t count,
                                   const size_t *indices,
                                   double *out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tatd_model_rank(const struct TatdModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tatd_model_order(const struct TatdModel *model);

/**
 * Writes a checkpoint directory readable by the command-line tool.
 *
 * # Safety
 * `model` must be live and `dir` a nul-terminated string.
 */
enum TatdStatus tatd_model_save(const struct TatdModel *model, const char *dir);

/**
 * # Safety
 * `dir` must be a nul-terminated string and `out` writable.
 */
enum TatdStatus tatd_model_load(const char *dir, struct TatdModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tatd_model_free(struct TatdModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TATD_H */
