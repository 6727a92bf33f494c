#ifndef EROC_H
#define EROC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ErocStatus {
  EROC_STATUS_OK = 0,
  EROC_STATUS_NULL_ARGUMENT = 1,
  EROC_STATUS_INVALID_ARGUMENT = 2,
  EROC_STATUS_MISSING_ARTIFACT = 3,
  EROC_STATUS_UNSUPPORTED = 4,
  EROC_STATUS_RUNTIME = 5,
  EROC_STATUS_PANIC = 6,
} ErocStatus;

/**
 * Resolved experiment configuration.
 */
typedef struct ErocConfig ErocConfig;

/**
 * Labeled image container.
 */
typedef struct ErocDataset ErocDataset;

/**
 * Trained multi-task network.
 */
typedef struct ErocModel ErocModel;

/**
 * Observer bound to a task.
 */
typedef struct ErocObserver ErocObserver;

/**
 * AEROC point estimate with its percentile-bootstrap interval.
 */
typedef struct ErocAeroc {
  double value;
  double ci_lo;
  double ci_hi;
} ErocAeroc;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *eroc_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *eroc_last_error(void);

/**
 * Loads a config file or bundled preset. `profile` may be null for the
 * desk profile.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum ErocStatus eroc_config_load(const char *path_or_preset,
                                 const char *profile,
                                 struct ErocConfig **out);

/**
 * Grid size and parameter dimension of the config's task.
 *
 * # Safety
 * `cfg` must come from [`eroc_config_load`]; outputs must be writable.
 */
enum ErocStatus eroc_config_shape(const struct ErocConfig *cfg,
                                  size_t *width,
                                  size_t *height,
                                  size_t *theta_dim);

/**
 * # Safety
 * `cfg` must be null or come from [`eroc_config_load`].
 */
void eroc_config_free(struct ErocConfig *cfg);

/**
 * Simulates `n_present + n_absent` images; `n_present = n_absent = 0`
 * draws the config's test set.
 *
 * # Safety
 * `cfg` must come from [`eroc_config_load`]; `out` must be writable.
 */
enum ErocStatus eroc_dataset_generate(const struct ErocConfig *cfg,
                                      size_t n_present,
                                      size_t n_absent,
                                      uint64_t seed,
                                      struct ErocDataset **out);

/**
 * Reads an image container written by `eroc generate`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ErocStatus eroc_dataset_read(const char *path, struct ErocDataset **out);

/**
 * Number of images, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t eroc_dataset_len(const struct ErocDataset *ds);

/**
 * Copies image `index` into `pixels` (`pixels_len = width * height`) and its
 * label into `present`. `theta` (length `theta_len = theta_dim`) receives
 * the true parameters, NaN for signal-absent images; it may be null.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum ErocStatus eroc_dataset_image(const struct ErocDataset *ds,
                                   size_t index,
                                   double *pixels,
                                   size_t pixels_len,
                                   bool *present,
                                   double *theta,
                                   size_t theta_len);

/**
 * # Safety
 * `ds` must be null or come from this library.
 */
void eroc_dataset_free(struct ErocDataset *ds);

/**
 * Loads a model file written by `eroc train`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ErocStatus eroc_model_load(const char *path, struct ErocModel **out);

/**
 * Network log-odds and parameter estimate for one image.
 *
 * # Safety
 * `pixels` must hold `width * height` values and `estimate` `estimate_len`.
 */
enum ErocStatus eroc_model_forward(const struct ErocModel *model,
                                   const double *pixels,
                                   size_t width,
                                   size_t height,
                                   double *log_odds,
                                   double *estimate,
                                   size_t estimate_len);

/**
 * # Safety
 * `model` must be null or come from [`eroc_model_load`].
 */
void eroc_model_free(struct ErocModel *model);

/**
 * Builds an observer (`analytic-io`, `mcmc-io`, `hybrid`, `sub-ideal`,
 * `slo`) for the config's task. `model` is required for the learned
 * observers and ignored otherwise; the SLO is built from the config.
 *
 * # Safety
 * Handles must come from this library; `model` may be null.
 */
enum ErocStatus eroc_observer_create(const struct ErocConfig *cfg,
                                     const char *kind,
                                     const struct ErocModel *model,
                                     struct ErocObserver **out);

/**
 * Scores one image. Stochastic observers draw from stream `(seed, index)`,
 * the stream the CLI uses for image `index`.
 *
 * # Safety
 * `pixels` must hold `width * height` values; `estimate` may be null,
 * otherwise it must hold `estimate_len` values.
 */
enum ErocStatus eroc_observer_score(const struct ErocObserver *obs,
                                    const double *pixels,
                                    size_t width,
                                    size_t height,
                                    uint64_t seed,
                                    uint64_t index,
                                    double *t,
                                    double *estimate,
                                    size_t estimate_len);

/**
 * # Safety
 * `obs` must be null or come from [`eroc_observer_create`].
 */
void eroc_observer_free(struct ErocObserver *obs);

/**
 * AEROC of `n_present` scored signal-present cases with utilities
 * `u_present` against `n_absent` signal-absent scores. `resamples = 0`
 * skips the bootstrap and reports the point estimate as both bounds.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be writable.
 */
enum ErocStatus eroc_aeroc(const double *t_present,
                           const double *u_present,
                           size_t n_present,
                           const double *t_absent,
                           size_t n_absent,
                           size_t resamples,
                           double level,
                           uint64_t seed,
                           struct ErocAeroc *out);

/**
 * Evaluates a utility given as `gaussian:3`, `quadratic:200`, `l1:20` or
 * `constant`.
 *
 * # Safety
 * `estimate` and `truth` must hold `dim` values; `out` must be writable.
 */
enum ErocStatus eroc_utility_eval(const char *spec,
                                  const double *estimate,
                                  const double *truth,
                                  size_t dim,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EROC_H */
