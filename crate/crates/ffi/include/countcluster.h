#ifndef COUNTCLUSTER_H
#define COUNTCLUSTER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_INVALID_MAP = 3,
  CC_STATUS_DEGENERATE_MAP = 4,
  CC_STATUS_DIVERGED = 5,
  CC_STATUS_RUNTIME = 6,
  CC_STATUS_PANIC = 7,
} CcStatus;

/**
 * Cluster set handle.
 */
typedef struct CcClusterSet CcClusterSet;

/**
 * Attention map handle.
 */
typedef struct CcMap CcMap;

/**
 * Run result handle.
 */
typedef struct CcRunResult CcRunResult;

/**
 * Knobs for [`cc_run`]. Obtain defaults from [`cc_run_options_default`].
 */
typedef struct {
  size_t size;
  size_t slots;
  double tau;
  /**
   * Constant step size for every guided timestep.
   */
  double alpha;
  double noise0;
  size_t min_area;
  /**
   * Nonzero disables the minimum center distance.
   */
  int32_t disable_min_distance;
  /**
   * Nonzero scales the loss by 1/k instead of 1/sqrt(k).
   */
  int32_t use_k_scaling;
} CcRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cc_version(void);

/**
 * Copies `height * width` row-major scores into a new map.
 *
 * # Safety
 * `scores` must point to `height * width` readable doubles and `out` must be
 * writable.
 */
CcStatus cc_map_new(const double *scores, size_t height, size_t width, CcMap **out);

/**
 * # Safety
 * `map` must be null or a handle from this library not yet freed.
 */
void cc_map_free(CcMap *map);

/**
 * Side length of a square map, 0 for null.
 *
 * # Safety
 * `map` must be null or a live handle.
 */
size_t cc_map_side(const CcMap *map);

/**
 * Copies the scores into `buf`, which must hold `len >= side * side` values.
 *
 * # Safety
 * `map` must be a live handle and `buf` writable for `len` doubles.
 */
CcStatus cc_map_copy_scores(const CcMap *map, double *buf, size_t len);

/**
 * Default smoothing followed by min-max normalization.
 *
 * # Safety
 * `raw` must be a live handle and `out` writable.
 */
CcStatus cc_map_preprocess(const CcMap *raw, CcMap **out);

/**
 * Number of 8-connected components with score >= `tau` and at least
 * `min_area` patches.
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
CcStatus cc_count_components(const CcMap *map, double tau, size_t min_area, size_t *out);

/**
 * Clusters a normalized map into `k` groups.
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
CcStatus cc_clusters_build(const CcMap *map,
                           size_t k,
                           double tau,
                           int32_t enforce_min_distance,
                           CcClusterSet **out);

/**
 * # Safety
 * `set` must be null or a live handle.
 */
void cc_clusters_free(CcClusterSet *set);

/**
 * Number of clusters, 0 for null.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t cc_clusters_len(const CcClusterSet *set);

/**
 * Relaxation passes used while selecting centers.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
uint32_t cc_clusters_relaxations(const CcClusterSet *set);

/**
 * Center and radius of cluster `index`.
 *
 * # Safety
 * `set` must be a live handle; output pointers must be writable.
 */
CcStatus cc_clusters_get(const CcClusterSet *set,
                         size_t index,
                         size_t *row,
                         size_t *col,
                         double *radius);

/**
 * Clustering loss of `map` against Gaussian targets built from `set`.
 *
 * # Safety
 * Handles must be live and `total` writable.
 */
CcStatus cc_clusters_loss(const CcMap *map,
                          const CcClusterSet *set,
                          double tau,
                          double epsilon,
                          double *total);

CcRunOptions cc_run_options_default(void);

/**
 * One full trajectory for target count `k`; `guided == 0` runs the baseline.
 * `options` may be null for defaults.
 *
 * # Safety
 * `options` must be null or readable and `out` writable.
 */
CcStatus cc_run(uint64_t seed,
                size_t k,
                int32_t guided,
                const CcRunOptions *options,
                CcRunResult **out);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
void cc_run_free(CcRunResult *result);

/**
 * Objects counted on the final map.
 *
 * # Safety
 * `result` must be a live handle.
 */
size_t cc_run_counted(const CcRunResult *result);

/**
 * Last guidance loss; returns 0 and leaves `loss` untouched when the run had
 * no guidance updates.
 *
 * # Safety
 * `result` must be a live handle and `loss` writable.
 */
int32_t cc_run_loss_final(const CcRunResult *result, double *loss);

/**
 * Copy of the final normalized map.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
CcStatus cc_run_final_map(const CcRunResult *result, CcMap **out);

/**
 * Result JSON as a newly allocated string; release with [`cc_string_free`].
 * Null on failure.
 *
 * # Safety
 * `result` must be a live handle.
 */
char *cc_run_to_json(const CcRunResult *result);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void cc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COUNTCLUSTER_H */
