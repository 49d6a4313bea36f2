#ifndef CLAR_H
#define CLAR_H

/* Generated by cbindgen from crates/ffi. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Width of the rows written by [`clar_encoder_embed`].
 */
#define CLAR_REPR_DIM 32

typedef enum ClarStatus {
  CLAR_STATUS_OK = 0,
  CLAR_STATUS_NULL_POINTER = 1,
  CLAR_STATUS_INVALID_ARGUMENT = 2,
  CLAR_STATUS_SHAPE_MISMATCH = 3,
  CLAR_STATUS_IO = 4,
  CLAR_STATUS_PARSE = 5,
  CLAR_STATUS_CHECKPOINT = 6,
  CLAR_STATUS_MISSING_ARTIFACT = 7,
  CLAR_STATUS_CONFIG = 8,
  CLAR_STATUS_BUFFER_TOO_SMALL = 9,
  CLAR_STATUS_PANIC = 10,
  CLAR_STATUS_INTERNAL = 11,
} ClarStatus;

/**
 * Trained noise predictor together with its schedule.
 */
typedef struct ClarDdpm ClarDdpm;

/**
 * Pretrained encoder.
 */
typedef struct ClarEncoder ClarEncoder;

/**
 * Linear probe over encoder representations.
 */
typedef struct ClarProbe ClarProbe;

/**
 * Linear noise schedule.
 */
typedef struct ClarSchedule ClarSchedule;

/**
 * Static templates and settings for adaptive sample weights.
 */
typedef struct ClarWeighter ClarWeighter;

/**
 * Guidance constants for [`clar_ddpm_generate`].
 */
typedef struct ClarGuidance {
  double lambda_h;
  double lambda_l;
  double n_h;
  double n_l;
} ClarGuidance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *clar_version(void);

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. The pointer stays valid until the next call.
 */
const char *clar_last_error_message(void);

/**
 * DTW distance with absolute-difference cost.
 *
 * # Safety
 * `a` and `b` must point to `na` and `nb` values; `out` must be writable.
 */
enum ClarStatus clar_dtw_distance(const double *a,
                                  size_t na,
                                  const double *b,
                                  size_t nb,
                                  double *out);

/**
 * Optimal warping path as `(i, j)` index pairs flattened into `out_pairs`
 * (`2 * capacity` entries). `out_len` always receives the path length;
 * when `capacity` is too small nothing else is written and
 * `CLAR_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out_pairs` may be null
 * when `capacity` is 0.
 */
enum ClarStatus clar_dtw_path(const double *a,
                              size_t na,
                              const double *b,
                              size_t nb,
                              size_t *out_pairs,
                              size_t capacity,
                              size_t *out_len,
                              double *out_cost);

/**
 * Undecimated Haar analysis; both outputs have length `n`.
 *
 * # Safety
 * `x`, `out_high` and `out_low` must be valid for `n` values.
 */
enum ClarStatus clar_haar_analysis(const double *x, size_t n, double *out_high, double *out_low);

/**
 * Mean-merges `b` onto `a` along their warping path; `out` has length `na`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum ClarStatus clar_warp_aggregate(const double *a,
                                    size_t na,
                                    const double *b,
                                    size_t nb,
                                    double *out);

/**
 * # Safety
 * `out` must be writable; the handle is released with [`clar_schedule_free`].
 */
enum ClarStatus clar_schedule_new(size_t steps,
                                  double beta_start,
                                  double beta_end,
                                  struct ClarSchedule **out);

/**
 * # Safety
 * `s` must be null or a handle from [`clar_schedule_new`] not yet freed.
 */
void clar_schedule_free(struct ClarSchedule *s);

/**
 * # Safety
 * `s` must be a live schedule handle and `out` writable.
 */
enum ClarStatus clar_schedule_alpha_bar(const struct ClarSchedule *s, size_t t, double *out);

/**
 * `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`, written to `out` (length `n`).
 *
 * # Safety
 * `s` must be a live schedule handle; arrays must hold `n` values.
 */
enum ClarStatus clar_forward_sample(const struct ClarSchedule *s,
                                    const double *z0,
                                    const double *eps,
                                    size_t n,
                                    size_t t,
                                    double *out);

/**
 * Loads a noise predictor checkpoint written by `clar train-ddpm`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum ClarStatus clar_ddpm_load(const char *path_, struct ClarDdpm **out);

/**
 * # Safety
 * `h` must be null or a handle from [`clar_ddpm_load`] not yet freed.
 */
void clar_ddpm_free(struct ClarDdpm *h);

/**
 * Sequence length and number of diffusion steps of a loaded predictor.
 *
 * # Safety
 * `h` must be a live handle; out-pointers must be writable.
 */
enum ClarStatus clar_ddpm_shape(const struct ClarDdpm *h, size_t *out_len, size_t *out_steps);

/**
 * Reference-guided generation from `src` and `reference` (both of the
 * predictor's sequence length `n`). A null `guidance` uses the defaults
 * for the predictor's step count.
 *
 * # Safety
 * `h` must be a live handle; arrays must hold `n` values; `guidance` may be null.
 */
enum ClarStatus clar_ddpm_generate(const struct ClarDdpm *h,
                                   const double *src,
                                   const double *reference,
                                   size_t n,
                                   const struct ClarGuidance *guidance,
                                   uint64_t seed,
                                   double *out);

/**
 * Draws `templates` static windows from a row-major `[rows, len]` pool.
 * `window` 0 selects the default window for `seq_len`.
 *
 * # Safety
 * `pool` must hold `rows * len` values and `out` be writable.
 */
enum ClarStatus clar_weighter_new(const double *pool,
                                  size_t rows,
                                  size_t len,
                                  size_t seq_len,
                                  size_t window,
                                  size_t templates,
                                  double alpha,
                                  uint64_t seed,
                                  struct ClarWeighter **out);

/**
 * # Safety
 * `w` must be null or a handle from [`clar_weighter_new`] not yet freed.
 */
void clar_weighter_free(struct ClarWeighter *w);

/**
 * Adaptive weight of one crop.
 *
 * # Safety
 * `w` must be a live handle, `x` must hold `n` values and `out` be writable.
 */
enum ClarStatus clar_weighter_sample_weight(const struct ClarWeighter *w,
                                            const double *x,
                                            size_t n,
                                            double *out);

/**
 * Weighted NT-Xent over `two_m` unit rows of width `dim` (row-major);
 * rows `2k` and `2k + 1` form pair `k` with weight `weights[k]`.
 *
 * # Safety
 * `embeddings` must hold `two_m * dim` values, `weights` `two_m / 2`.
 */
enum ClarStatus clar_weighted_ntxent(const double *embeddings,
                                     size_t two_m,
                                     size_t dim,
                                     const double *weights,
                                     double tau,
                                     double *out);

/**
 * Loads an encoder checkpoint written by `clar pretrain`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum ClarStatus clar_encoder_load(const char *path_, struct ClarEncoder **out);

/**
 * # Safety
 * `h` must be null or a handle from [`clar_encoder_load`] not yet freed.
 */
void clar_encoder_free(struct ClarEncoder *h);

/**
 * # Safety
 * `h` must be a live handle and `out` writable.
 */
enum ClarStatus clar_encoder_input_len(const struct ClarEncoder *h, size_t *out);

/**
 * Representations of `rows` sequences (row-major, encoder input length
 * each); `out` receives `rows * CLAR_REPR_DIM` values.
 *
 * # Safety
 * Arrays must be valid for the stated sizes.
 */
enum ClarStatus clar_encoder_embed(const struct ClarEncoder *h,
                                   const double *x,
                                   size_t rows,
                                   double *out);

/**
 * Loads a probe checkpoint written by `clar finetune`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum ClarStatus clar_probe_load(const char *path_, struct ClarProbe **out);

/**
 * # Safety
 * `h` must be null or a handle from [`clar_probe_load`] not yet freed.
 */
void clar_probe_free(struct ClarProbe *h);

/**
 * Predicted class of each of `rows` sequences.
 *
 * # Safety
 * `x` must hold `rows * input_len` values and `out_labels` `rows` entries.
 */
enum ClarStatus clar_probe_predict(const struct ClarProbe *probe,
                                   const struct ClarEncoder *encoder,
                                   const double *x,
                                   size_t rows,
                                   size_t *out_labels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAR_H */
