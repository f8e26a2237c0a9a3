#ifndef BNN_H
#define BNN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum BnnStatus {
  BNN_STATUS_OK = 0,
  BNN_STATUS_NULL_POINTER = 1,
  BNN_STATUS_INVALID_ARGUMENT = 2,
  BNN_STATUS_INVALID_CONFIG = 3,
  BNN_STATUS_DIMENSION_MISMATCH = 4,
  // Divergence, non-finite values or a failed sampler initialisation.
  BNN_STATUS_NUMERIC = 5,
  BNN_STATUS_IO = 6,
  BNN_STATUS_MISSING_ARTIFACT = 7,
  BNN_STATUS_PARSE = 8,
  // A Rust panic was caught at the boundary.
  BNN_STATUS_PANIC = 9,
} BnnStatus;

typedef enum BnnActivation {
  BNN_ACTIVATION_RELU = 0,
  BNN_ACTIVATION_SIGMOID = 1,
} BnnActivation;

typedef enum BnnPrior {
  BNN_PRIOR_GAUSSIAN = 0,
  BNN_PRIOR_STUDENT_T = 1,
} BnnPrior;

// Inputs and targets.
typedef struct BnnDataset BnnDataset;

// Posterior draws from either engine.
typedef struct BnnDraws BnnDraws;

// Network architecture and prior.
typedef struct BnnModel BnnModel;

// Summary of an elpd estimate; per-point values go to caller buffers.
typedef struct BnnElpd {
  double total;
  double se;
  double p_eff;
} BnnElpd;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *bnn_last_error_message(void);

// Library version as a static nul-terminated string.
const char *bnn_version(void);

// Creates a network with `n_hidden` hidden layers of the given widths.
//
// `activation` and `prior` take [`BnnActivation`] and [`BnnPrior`] values; any other
// number is rejected with `InvalidArgument`.
//
// # Safety
// `widths` must point to `n_hidden` values and `out` must be writable.
enum BnnStatus bnn_model_new(size_t input_dim,
                             const size_t *widths,
                             size_t n_hidden,
                             size_t output_dim,
                             uint32_t activation,
                             uint32_t prior,
                             struct BnnModel **out);

// # Safety
// `model` must come from [`bnn_model_new`] and not be used afterwards. Null is ignored.
void bnn_model_free(struct BnnModel *model);

// Length of the flat parameter vector: every `W_l` then `b_l`, then `log sigma`. 0 for null.
//
// # Safety
// `model` must be null or a live handle.
size_t bnn_model_param_count(const struct BnnModel *model);

// Copies `n` rows of inputs (`n x input_dim`) and targets (`n x output_dim`).
//
// # Safety
// Buffers must hold the stated number of values and `out` must be writable.
enum BnnStatus bnn_dataset_new(const double *x,
                               size_t n,
                               size_t input_dim,
                               const double *y,
                               size_t output_dim,
                               struct BnnDataset **out);

// # Safety
// `data` must come from [`bnn_dataset_new`] and not be used afterwards. Null is ignored.
void bnn_dataset_free(struct BnnDataset *data);

// Unnormalised log posterior at `params`.
//
// # Safety
// Handles must be live, `params` must hold `len` values and `out` must be writable.
enum BnnStatus bnn_log_posterior(const struct BnnModel *model,
                                 const struct BnnDataset *data,
                                 const double *params,
                                 size_t len,
                                 double *out);

// Gradient of the log posterior, written into `grad` (same length as `params`).
//
// # Safety
// Handles must be live and both buffers must hold `len` values.
enum BnnStatus bnn_grad_log_posterior(const struct BnnModel *model,
                                      const struct BnnDataset *data,
                                      const double *params,
                                      size_t len,
                                      double *grad);

// Mean-field ADVI followed by `posterior_draws` draws from the fitted approximation.
//
// # Safety
// Handles must be live and `out` must be writable.
enum BnnStatus bnn_fit_vi(const struct BnnModel *model,
                          const struct BnnDataset *data,
                          size_t iterations,
                          double learning_rate,
                          size_t posterior_draws,
                          uint64_t seed,
                          struct BnnDraws **out);

// NUTS with dual-averaging warmup; `chains` chains run in parallel.
//
// # Safety
// Handles must be live and `out` must be writable.
enum BnnStatus bnn_fit_nuts(const struct BnnModel *model,
                            const struct BnnDataset *data,
                            size_t warmup,
                            size_t samples,
                            size_t chains,
                            size_t max_tree_depth,
                            uint64_t seed,
                            struct BnnDraws **out);

// # Safety
// `draws` must come from a fit call and not be used afterwards. Null is ignored.
void bnn_draws_free(struct BnnDraws *draws);

// Number of draws and parameters.
//
// # Safety
// `draws` must be live and both outputs writable.
enum BnnStatus bnn_draws_shape(const struct BnnDraws *draws, size_t *num_draws, size_t *num_params);

// Copies the draws row-major into `buf`, which must hold exactly `num_draws * num_params` values.
//
// # Safety
// `draws` must be live and `buf` must hold `len` values.
enum BnnStatus bnn_draws_copy(const struct BnnDraws *draws, double *buf, size_t len);

// Posterior predictive mean and central `level` interval of the observations at `n` inputs.
//
// Outputs hold `n * output_dim` values each; `lower` and `upper` may be null.
//
// # Safety
// Handles must be live and buffers must be sized as stated.
enum BnnStatus bnn_predict(const struct BnnModel *model,
                           const struct BnnDraws *draws,
                           const double *x,
                           size_t n,
                           double level,
                           uint64_t seed,
                           double *mean,
                           double *lower,
                           double *upper);

// PSIS-LOO from an `n x s` (points by draws) log-likelihood matrix.
//
// `pointwise` and `khat` receive `n` values each and may be null.
//
// # Safety
// `loglik` must hold `n * s` values and non-null outputs must be sized as stated.
enum BnnStatus bnn_elpd_loo(const double *loglik,
                            size_t n,
                            size_t s,
                            struct BnnElpd *out,
                            double *pointwise,
                            double *khat);

// WAIC with the log-density variance penalty; `pointwise` may be null.
//
// # Safety
// `loglik` must hold `n * s` values and non-null outputs must be sized as stated.
enum BnnStatus bnn_elpd_waic(const double *loglik,
                             size_t n,
                             size_t s,
                             struct BnnElpd *out,
                             double *pointwise);

// Stacking weights from an `n x k` matrix of leave-one-out log densities.
//
// # Safety
// `log_dens` must hold `n * k` values and `weights` must hold `k`.
enum BnnStatus bnn_stacking_weights(const double *log_dens, size_t n, size_t k, double *weights);

// Pseudo-BMA weights from an `n x k` matrix of pointwise elpd values.
//
// # Safety
// `pointwise` must hold `n * k` values and `weights` must hold `k`.
enum BnnStatus bnn_pseudo_bma_weights(const double *pointwise, size_t n, size_t k, double *weights);

// Runs a named bundle end to end into `out_dir`; `scale` multiplies iteration counts.
//
// # Safety
// Both strings must be nul-terminated.
enum BnnStatus bnn_reproduce(const char *name, const char *out_dir, double scale, bool force);

// Runs every stage of the experiment described by a TOML spec file.
//
// # Safety
// Both strings must be nul-terminated.
enum BnnStatus bnn_run_spec(const char *spec_path, const char *out_dir, bool force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BNN_H */
