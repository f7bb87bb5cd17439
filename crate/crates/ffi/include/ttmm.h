#ifndef TTMM_H
#define TTMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TtmmStatus {
  TTMM_STATUS_OK = 0,
  TTMM_STATUS_NULL_POINTER = 1,
  TTMM_STATUS_INVALID_ARGUMENT = 2,
  TTMM_STATUS_IO = 3,
  TTMM_STATUS_CORRUPT_CATALOG = 4,
  TTMM_STATUS_CONFIG = 5,
  TTMM_STATUS_ROUTING = 6,
  TTMM_STATUS_MODEL = 7,
  TTMM_STATUS_BUFFER_TOO_SMALL = 8,
  TTMM_STATUS_PANIC = 9,
} TtmmStatus;

/**
 * Opaque catalog handle with the base model and every expert in memory.
 */
typedef struct TtmmCatalog TtmmCatalog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens the catalog directory `path` and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TtmmStatus ttmm_catalog_open(const char *path, struct TtmmCatalog **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `catalog` must come from [`ttmm_catalog_open`] and not be used afterwards.
 */
void ttmm_catalog_free(struct TtmmCatalog *catalog);

/**
 * # Safety
 * `catalog` must be a live handle and `out` a valid pointer.
 */
enum TtmmStatus ttmm_catalog_num_experts(const struct TtmmCatalog *catalog, size_t *out);

/**
 * Sparse-softmax routing of `prompt`; writes active expert ids and weights.
 *
 * # Safety
 * Pointers must be valid; `ids` and `weights` must hold `capacity` entries.
 */
enum TtmmStatus ttmm_route(const struct TtmmCatalog *catalog,
                           const char *prompt,
                           double beta,
                           double tau,
                           size_t *ids,
                           double *weights,
                           size_t capacity,
                           size_t *out_len);

/**
 * Softmax over the `n` experts closest to `prompt`.
 *
 * # Safety
 * As [`ttmm_route`].
 */
enum TtmmStatus ttmm_route_fixed_n(const struct TtmmCatalog *catalog,
                                   const char *prompt,
                                   size_t n,
                                   double beta,
                                   size_t *ids,
                                   double *weights,
                                   size_t capacity,
                                   size_t *out_len);

/**
 * Dense sparse softmax of `z[0..k]` into `out[0..k]`.
 *
 * # Safety
 * `z` and `out` must each hold `k` values.
 */
enum TtmmStatus ttmm_sparse_softmax(const double *z, size_t k, double tau, double *out);

/**
 * Perplexity of `text` under the merge routed on its first
 * `query_prefix_len` characters, scoring after `eval_prefix_len`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TtmmStatus ttmm_perplexity(const struct TtmmCatalog *catalog,
                                const char *text,
                                size_t query_prefix_len,
                                size_t eval_prefix_len,
                                double beta,
                                double tau,
                                double *out);

/**
 * Samples up to `n_tokens` characters after `prompt` from the routed merge
 * and writes the NUL-terminated text (prompt included) into `buf`.
 * `*out_len` receives the text length in bytes, without the terminator.
 *
 * # Safety
 * Pointers must be valid and `buf` must hold `capacity` bytes.
 */
enum TtmmStatus ttmm_generate(const struct TtmmCatalog *catalog,
                              const char *prompt,
                              size_t n_tokens,
                              double beta,
                              double tau,
                              uint64_t seed,
                              char *buf,
                              size_t capacity,
                              size_t *out_len);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *ttmm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ttmm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTMM_H */
