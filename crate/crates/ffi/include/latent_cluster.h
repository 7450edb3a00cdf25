#ifndef LATENT_CLUSTER_H
#define LATENT_CLUSTER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_ARGUMENT = 2,
  LC_STATUS_DIMENSION = 3,
  LC_STATUS_IO = 4,
  LC_STATUS_CHECKPOINT = 5,
  LC_STATUS_INSUFFICIENT_DATA = 6,
  LC_STATUS_UNDEFINED_METRIC = 7,
  LC_STATUS_INTERNAL = 8,
} LcStatus;

/**
 * A trained autoencoder. Opaque to C; create with [`lc_model_load`],
 * release with [`lc_model_free`].
 */
typedef struct LcModel LcModel;

/**
 * Scores of one clustering against ground truth.
 */
typedef struct LcMetrics {
  double silhouette;
  double davies_bouldin;
  double calinski_harabasz;
  double nmi;
  double ari;
  double aligned_accuracy;
} LcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *lc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lc_version(void);

/**
 * Load a checkpoint. `latent_dim` is the embedding width it was trained
 * with (64 by default). On success `*out` owns a new model.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LcStatus lc_model_load(const char *path, size_t latent_dim, struct LcModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`lc_model_load`] and not be freed twice.
 */
void lc_model_free(struct LcModel *model);

/**
 * Embedding width, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t lc_model_latent_dim(const struct LcModel *model);

/**
 * Trainable parameter count, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t lc_model_parameter_count(const struct LcModel *model);

/**
 * Embed `n` 28x28 images (`n * 784` floats in [0, 1]) into `out`
 * (`out_len` must equal `n * latent_dim`). Rows of `out` are unit-norm.
 *
 * # Safety
 * `images` must hold `n * 784` floats; `out` must hold `out_len` floats.
 */
enum LcStatus lc_model_encode(const struct LcModel *model,
                              const float *images,
                              size_t n,
                              float *out,
                              size_t out_len);

/**
 * KMeans (k-means++ seeding, Lloyd iterations) on `x[n, d]`. Writes one
 * cluster id in `0..k` per row to `assignments` and, if non-null, the
 * final inertia to `inertia`.
 *
 * # Safety
 * `x` must hold `n * d` doubles; `assignments` must hold `n` values;
 * `inertia` must be null or writable.
 */
enum LcStatus lc_kmeans(const double *x,
                        size_t n,
                        size_t d,
                        size_t k,
                        uint64_t seed,
                        size_t max_iter,
                        double tol,
                        uint32_t *assignments,
                        double *inertia);

/**
 * Score a clustering of `x[n, d]`: internal metrics from `clusters`,
 * external ones against `truth`. `k` is the cluster count used for
 * alignment. NMI uses the geometric normaliser when `nmi_geometric` is
 * true, else the arithmetic one.
 *
 * # Safety
 * `x` must hold `n * d` doubles; `clusters` and `truth` must hold `n`
 * values; `out` must be writable.
 */
enum LcStatus lc_metrics(const double *x,
                         size_t n,
                         size_t d,
                         const uint32_t *clusters,
                         const uint32_t *truth,
                         size_t k,
                         bool nmi_geometric,
                         struct LcMetrics *out);

/**
 * Adjusted Rand index between two labelings of length `n`.
 *
 * # Safety
 * `a` and `b` must hold `n` values; `out` must be writable.
 */
enum LcStatus lc_ari(const uint32_t *a, const uint32_t *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENT_CLUSTER_H */
