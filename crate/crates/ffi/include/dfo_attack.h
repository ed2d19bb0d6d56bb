#ifndef DFO_ATTACK_H
#define DFO_ATTACK_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfoStatus {
  DFO_STATUS_OK = 0,
  DFO_STATUS_NULL_POINTER = 1,
  DFO_STATUS_INVALID_ARGUMENT = 2,
  DFO_STATUS_SHAPE_MISMATCH = 3,
  DFO_STATUS_INVALID_GRID = 4,
  DFO_STATUS_BUDGET_EXHAUSTED = 5,
  DFO_STATUS_ORACLE = 6,
  DFO_STATUS_MODEL_FORMAT = 7,
  DFO_STATUS_IO = 8,
  DFO_STATUS_TRAINING = 9,
  DFO_STATUS_CONFIG = 10,
  DFO_STATUS_PANIC = 11,
} DfoStatus;

typedef enum DfoOptimizerKind {
  DFO_OPTIMIZER_KIND_OPO_CAUCHY = 0,
  DFO_OPTIMIZER_KIND_OPO_GAUSS = 1,
  DFO_OPTIMIZER_KIND_CMA = 2,
  DFO_OPTIMIZER_KIND_CMA_DIAG = 3,
  DFO_OPTIMIZER_KIND_RANDOM = 4,
  DFO_OPTIMIZER_KIND_DE = 5,
} DfoOptimizerKind;

typedef enum DfoForm {
  DFO_FORM_CONTINUOUS = 0,
  DFO_FORM_DISCRETE = 1,
} DfoForm;

typedef enum DfoLoss {
  DFO_LOSS_CROSS_ENTROPY = 0,
  DFO_LOSS_CARLINI_WAGNER = 1,
} DfoLoss;

/**
 * Opaque model handle.
 */
typedef struct DfoModel DfoModel;

/**
 * Opaque ask/tell optimizer handle.
 */
typedef struct DfoOptimizer DfoOptimizer;

/**
 * Objective for [`dfo_minimize`]: receives `dimension` values and `user_data`.
 */
typedef double (*DfoObjective)(const double *point, size_t dimension, void *user_data);

/**
 * Settings for [`dfo_attack_run`]. Start from [`dfo_attack_config_default`].
 */
typedef struct DfoAttackConfig {
  enum DfoOptimizerKind optimizer;
  enum DfoForm form;
  enum DfoLoss loss;
  double epsilon;
  size_t n_tiles;
  uint64_t query_limit;
  uint64_t seed;
  /**
   * Non-zero for a targeted attack towards `target`.
   */
  uint8_t targeted;
  size_t target;
} DfoAttackConfig;

typedef struct DfoAttackResult {
  uint8_t initially_correct;
  uint8_t success;
  uint64_t queries_used;
  /**
   * Attack loss at the last query; NaN when no query was made.
   */
  double final_loss;
} DfoAttackResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *dfo_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *dfo_status_name(enum DfoStatus status);

/**
 * Loads a serialized model file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum DfoStatus dfo_model_load(const char *path, struct DfoModel **out);

/**
 * Connects to a logits server (`host:port`, `http:host:port` or a URL).
 *
 * # Safety
 * `endpoint` must be a nul-terminated string; `out` must be writable.
 */
enum DfoStatus dfo_model_connect(const char *endpoint, struct DfoModel **out);

/**
 * Builds a linear model. `weights` is `classes × (channels·height·width)`,
 * row-major; `bias` has `classes` entries.
 *
 * # Safety
 * `weights` and `bias` must point to arrays of the stated sizes.
 */
enum DfoStatus dfo_model_linear_new(size_t channels,
                                    size_t height,
                                    size_t width,
                                    size_t classes,
                                    const double *weights,
                                    const double *bias,
                                    struct DfoModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dfo_model_free(struct DfoModel *model);

/**
 * Input shape and class count.
 *
 * # Safety
 * `model` must be a live handle; the output pointers must be writable.
 */
enum DfoStatus dfo_model_info(const struct DfoModel *model,
                              size_t *channels,
                              size_t *height,
                              size_t *width,
                              size_t *classes);

/**
 * Writes the logits of `image` (`image_len` values in `[0,1]`) into `out`.
 *
 * # Safety
 * `image` must hold `image_len` values and `out` `out_len` writable slots.
 */
enum DfoStatus dfo_model_logits(const struct DfoModel *model,
                                const double *image,
                                size_t image_len,
                                double *out,
                                size_t out_len);

/**
 * Creates an ask/tell optimizer. `mean` may be null for the origin.
 *
 * # Safety
 * `mean`, when non-null, must hold `dimension` values; `out` must be writable.
 */
enum DfoStatus dfo_optimizer_new(enum DfoOptimizerKind kind,
                                 size_t dimension,
                                 const double *mean,
                                 double sigma,
                                 uint64_t seed,
                                 struct DfoOptimizer **out);

/**
 * # Safety
 * `optimizer` must come from this library and not be used afterwards.
 */
void dfo_optimizer_free(struct DfoOptimizer *optimizer);

/**
 * Draws the next batch and stores its size in `count`. Read the points with
 * [`dfo_optimizer_candidate`], then report their values with
 * [`dfo_optimizer_tell`].
 *
 * # Safety
 * `optimizer` must be a live handle; `count` must be writable.
 */
enum DfoStatus dfo_optimizer_ask(struct DfoOptimizer *optimizer, size_t *count);

/**
 * Copies candidate `index` of the current batch into `out`.
 *
 * # Safety
 * `out` must have `len` writable slots.
 */
enum DfoStatus dfo_optimizer_candidate(const struct DfoOptimizer *optimizer,
                                       size_t index,
                                       double *out,
                                       size_t len);

/**
 * Reports the objective values of the whole current batch.
 *
 * # Safety
 * `values` must hold `count` values.
 */
enum DfoStatus dfo_optimizer_tell(struct DfoOptimizer *optimizer,
                                  const double *values,
                                  size_t count);

/**
 * # Safety
 * `optimizer` must be a live handle; `sigma` must be writable.
 */
enum DfoStatus dfo_optimizer_sigma(const struct DfoOptimizer *optimizer, double *sigma);

/**
 * Minimises `objective` with at most `budget` evaluations. `mean` may be
 * null for the origin. The best point goes to `best_point` (`dimension`
 * slots); `best_value` and `evaluations` may be null.
 *
 * # Safety
 * `objective` must be safe to call with `user_data`; pointer arguments must
 * be valid for the stated sizes.
 */
enum DfoStatus dfo_minimize(enum DfoOptimizerKind kind,
                            size_t dimension,
                            uint64_t budget,
                            uint64_t seed,
                            const double *mean,
                            DfoObjective objective,
                            void *user_data,
                            double *best_point,
                            double *best_value,
                            uint64_t *evaluations);

/**
 * Defaults: CMA, continuous form, cross-entropy, ε = 0.05, 50 tiles,
 * 10,000 queries, seed 0, untargeted.
 */
struct DfoAttackConfig dfo_attack_config_default(void);

/**
 * Attacks one image whose true class is `label`.
 *
 * # Safety
 * `image` must hold `image_len` values; `config` and `result` must be valid.
 */
enum DfoStatus dfo_attack_run(const struct DfoModel *model,
                              const double *image,
                              size_t image_len,
                              size_t label,
                              const struct DfoAttackConfig *config,
                              struct DfoAttackResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DFO_ATTACK_H */
