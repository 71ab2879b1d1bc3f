#ifndef SUBLAB_H
#define SUBLAB_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum SublabStatus {
  SUBLAB_STATUS_OK = 0,
  SUBLAB_STATUS_NULL_POINTER = 1,
  SUBLAB_STATUS_INVALID_ARGUMENT = 2,
  SUBLAB_STATUS_INVALID_CONFIG = 3,
  SUBLAB_STATUS_RUNTIME = 4,
  SUBLAB_STATUS_PANIC = 5,
} SublabStatus;

/**
 * A finished chain: states, acceptances and usage counts.
 */
typedef struct SublabChain SublabChain;

/**
 * A dataset of `n` rows with `d` covariates and one response each.
 */
typedef struct SublabDataset SublabDataset;

/**
 * A transition kernel bound to a model.
 */
typedef struct SublabKernel SublabKernel;

/**
 * Usage summary of a chain.
 */
typedef struct SublabChainStats {
  double acceptance;
  /**
   * Total likelihood-term evaluations.
   */
  uint64_t accesses;
  /**
   * Distinct datapoints ever evaluated.
   */
  size_t covered;
} SublabChainStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *sublab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sublab_version(void);

/**
 * Builds a dataset from row-major `covariates` (`n·d` values) and
 * `responses` (`n` values).
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `out` must be valid.
 */
enum SublabStatus sublab_dataset_new(const double *covariates,
                                     const double *responses,
                                     size_t n,
                                     size_t d,
                                     struct SublabDataset **out);

/**
 * # Safety
 * `ds` must come from [`sublab_dataset_new`] or be null.
 */
void sublab_dataset_free(struct SublabDataset *ds);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t sublab_dataset_len(const struct SublabDataset *ds);

/**
 * Builds a kernel from JSON. `model_json` is a model spec such as
 * `{"type":"toy","toy":"gaussian_hierarchy"}`; `kernel_json` is a kernel
 * config such as `{"kind":"generic","batch_size":10}`. `seed` drives any
 * construction-time randomness (the scan-order permutation).
 *
 * # Safety
 * Strings must be NUL-terminated; `data` must be a live handle.
 */
enum SublabStatus sublab_kernel_new(const char *model_json,
                                    const char *kernel_json,
                                    const struct SublabDataset *data,
                                    uint64_t seed,
                                    struct SublabKernel **out);

/**
 * # Safety
 * `k` must come from [`sublab_kernel_new`] or be null.
 */
void sublab_kernel_free(struct SublabKernel *k);

/**
 * Runs `steps` transitions from `init` (length `dim`).
 *
 * # Safety
 * Handles must be live; `init` must hold `dim` values.
 */
enum SublabStatus sublab_chain_run(const struct SublabKernel *kernel,
                                   const struct SublabDataset *data,
                                   const double *init,
                                   size_t dim,
                                   size_t steps,
                                   uint64_t seed,
                                   struct SublabChain **out);

/**
 * # Safety
 * `c` must come from [`sublab_chain_run`] or be null.
 */
void sublab_chain_free(struct SublabChain *c);

/**
 * Number of stored states (steps + 1), or 0 for a null handle.
 *
 * # Safety
 * `c` must be a live handle or null.
 */
size_t sublab_chain_len(const struct SublabChain *c);

/**
 * Parameter dimension, or 0 for a null handle.
 *
 * # Safety
 * `c` must be a live handle or null.
 */
size_t sublab_chain_dim(const struct SublabChain *c);

/**
 * Copies the states row-major into `buf`, which must hold `len · dim`
 * values.
 *
 * # Safety
 * `buf` must be writable for `buf_len` values.
 */
enum SublabStatus sublab_chain_states(const struct SublabChain *c, double *buf, size_t buf_len);

/**
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum SublabStatus sublab_chain_stats(const struct SublabChain *c, struct SublabChainStats *out);

/**
 * Spectral gap of a row-stochastic `k × k` matrix given row-major.
 *
 * # Safety
 * `p` must hold `k²` values; `out` must be writable.
 */
enum SublabStatus sublab_spectral_gap(const double *p, size_t k, double *out);

/**
 * Runs a named experiment from JSON config text, writing artifacts into
 * `out_dir`. `failed` (optional) receives the failed replicate count.
 *
 * # Safety
 * Strings must be NUL-terminated; `failed` must be writable or null.
 */
enum SublabStatus sublab_run_experiment(const char *experiment,
                                        const char *config_json,
                                        uint64_t seed,
                                        const char *out_dir,
                                        size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBLAB_H */
