#ifndef TOPIC_ALIGN_H
#define TOPIC_ALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every `ta_*` call.
 */
typedef enum TaStatus {
  TA_STATUS_OK = 0,
  TA_STATUS_NULL_POINTER = 1,
  TA_STATUS_INVALID_ARGUMENT = 2,
  TA_STATUS_MALFORMED_FILE = 3,
  TA_STATUS_IO = 4,
  TA_STATUS_SCHEMA = 5,
  TA_STATUS_DIMENSION = 6,
  TA_STATUS_TRANSPORT = 7,
  TA_STATUS_PANIC = 8,
  TA_STATUS_BUFFER_TOO_SMALL = 9,
} TaStatus;

typedef enum TaMethod {
  TA_METHOD_PRODUCT = 0,
  TA_METHOD_TRANSPORT = 1,
} TaMethod;

/*
 Aligned ensemble with paths and scores.
 */
typedef struct TaAlignment TaAlignment;

/*
 Sample-by-feature count matrix.
 */
typedef struct TaCounts TaCounts;

/*
 LDA models fitted across a range of K.
 */
typedef struct TaEnsemble TaEnsemble;

/*
 One topic of an alignment. `refinement` is meaningful only when
 `has_refinement` is true (it is false for the finest model).
 */
typedef struct TaNode {
  size_t model;
  size_t topic;
  size_t display_index;
  size_t path;
  double mass;
  double coherence;
  double refinement;
  bool has_refinement;
} TaNode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the most recent failure on this thread. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *ta_last_error(void);

/*
 Build a count matrix from `n_samples * n_features` row-major counts.

 # Safety
 `data` must point to `n_samples * n_features` readable values and `out`
 to writable storage for one handle.
 */
enum TaStatus ta_counts_from_dense(const uint64_t *data,
                                   size_t n_samples,
                                   size_t n_features,
                                   struct TaCounts **out);

/*
 Load counts from a `.csv` or `.json` file.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum TaStatus ta_counts_load(const char *path, struct TaCounts **out);

/*
 # Safety
 `counts` must be a live handle; `n_samples` and `n_features` writable.
 */
enum TaStatus ta_counts_dims(const struct TaCounts *counts, size_t *n_samples, size_t *n_features);

/*
 # Safety
 `counts` must be null or a handle not yet freed.
 */
void ta_counts_free(struct TaCounts *counts);

/*
 Fit one model per K in `k_min..=k_max` by collapsed Gibbs sampling.

 # Safety
 `counts` must be a live handle and `out` writable.
 */
enum TaStatus ta_ensemble_fit(const struct TaCounts *counts,
                              size_t k_min,
                              size_t k_max,
                              double lambda_gamma,
                              double lambda_beta,
                              size_t burn_in,
                              size_t samples,
                              size_t thin,
                              uint64_t seed,
                              struct TaEnsemble **out);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum TaStatus ta_ensemble_load(const char *path, struct TaEnsemble **out);

/*
 # Safety
 `ensemble` must be a live handle and `path` a NUL-terminated string.
 */
enum TaStatus ta_ensemble_save(const struct TaEnsemble *ensemble, const char *path);

/*
 # Safety
 `ensemble` must be null or a handle not yet freed.
 */
void ta_ensemble_free(struct TaEnsemble *ensemble);

/*
 # Safety
 `ensemble` must be a live handle and `out` writable.
 */
enum TaStatus ta_ensemble_num_models(const struct TaEnsemble *ensemble, size_t *out);

/*
 Topic count, feature count and sample count of model `index`.

 # Safety
 `ensemble` must be a live handle; output pointers writable.
 */
enum TaStatus ta_ensemble_model_dims(const struct TaEnsemble *ensemble,
                                     size_t index,
                                     size_t *k,
                                     size_t *n_features,
                                     size_t *n_samples);

/*
 Copy the D x K topic matrix of model `index` (row-major, columns are
 topics) into `buf`.

 # Safety
 `buf` must point to `len` writable doubles.
 */
enum TaStatus ta_ensemble_beta(const struct TaEnsemble *ensemble,
                               size_t index,
                               double *buf,
                               size_t len);

/*
 Copy the N x K membership matrix of model `index` (row-major) into `buf`.

 # Safety
 `buf` must point to `len` writable doubles.
 */
enum TaStatus ta_ensemble_gamma(const struct TaEnsemble *ensemble,
                                size_t index,
                                double *buf,
                                size_t len);

/*
 Held-out perplexity of model `index` on `heldout`.

 # Safety
 Handles must be live and `out` writable.
 */
enum TaStatus ta_perplexity(const struct TaEnsemble *ensemble,
                            size_t index,
                            const struct TaCounts *heldout,
                            uint64_t seed,
                            double *out);

/*
 Align all model pairs, reorder topics for display, assign paths and score
 every topic.

 # Safety
 `ensemble` must be a live handle and `out` writable.
 */
enum TaStatus ta_align(const struct TaEnsemble *ensemble,
                       enum TaMethod method,
                       struct TaAlignment **out);

/*
 # Safety
 `alignment` must be null or a handle not yet freed.
 */
void ta_alignment_free(struct TaAlignment *alignment);

/*
 # Safety
 `alignment` must be a live handle and `out` writable.
 */
enum TaStatus ta_alignment_num_nodes(const struct TaAlignment *alignment, size_t *out);

/*
 Node `index` in model-major, topic-minor order.

 # Safety
 `alignment` must be a live handle and `out` writable.
 */
enum TaStatus ta_alignment_node(const struct TaAlignment *alignment,
                                size_t index,
                                struct TaNode *out);

/*
 Number of distinct paths among the topics of model `model`.

 # Safety
 `alignment` must be a live handle and `out` writable.
 */
enum TaStatus ta_alignment_n_paths(const struct TaAlignment *alignment, size_t model, size_t *out);

/*
 Raw weights between models `m < m2` as a row-major `K_m x K_m2` matrix.

 # Safety
 `buf` must point to `len` writable doubles.
 */
enum TaStatus ta_alignment_pair_weights(const struct TaAlignment *alignment,
                                        size_t m,
                                        size_t m2,
                                        double *buf,
                                        size_t len);

/*
 Write the alignment document as JSON.

 # Safety
 `alignment` must be a live handle and `path` a NUL-terminated string.
 */
enum TaStatus ta_alignment_write_json(const struct TaAlignment *alignment, const char *path);

/*
 Jensen-Shannon divergence (natural log) between two vectors of length `len`.

 # Safety
 `p` and `q` must point to `len` readable doubles; `out` writable.
 */
enum TaStatus ta_jsd(const double *p, const double *q, size_t len, double *out);

/*
 # Safety
 `p` and `q` must point to `len` readable doubles; `out` writable.
 */
enum TaStatus ta_cosine(const double *p, const double *q, size_t len, double *out);

/*
 Exact optimal transport between `supply` (length `a`) and `demand`
 (length `b`) under a row-major `a x b` cost matrix. Writes the plan into
 `plan` (row-major, `a * b` values) and its cost into `objective`.

 # Safety
 Input pointers must cover the stated lengths; outputs writable.
 */
enum TaStatus ta_transport_solve(const double *supply,
                                 size_t a,
                                 const double *demand,
                                 size_t b,
                                 const double *cost,
                                 double *plan,
                                 size_t plan_len,
                                 double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPIC_ALIGN_H */
