#ifndef SEGREFINE_H
#define SEGREFINE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum SegStatus {
  SEG_STATUS_OK = 0,
  SEG_STATUS_NULL_POINTER = 1,
  SEG_STATUS_INVALID_ARGUMENT = 2,
  SEG_STATUS_SHAPE_MISMATCH = 3,
  SEG_STATUS_FORMAT = 4,
  SEG_STATUS_IO = 5,
  SEG_STATUS_MISSING = 6,
  SEG_STATUS_PANIC = 7,
} SegStatus;

/**
 * Attention mask kind for [`seg_inject_attention`].
 */
typedef enum SegAttentionKind {
  SEG_ATTENTION_KIND_CROSS = 0,
  SEG_ATTENTION_KIND_SELF_ATTENTION = 1,
} SegAttentionKind;

/**
 * A feature map of unit-norm pixel vectors.
 */
typedef struct SegFeatureMap SegFeatureMap;

/**
 * A cumulative noise schedule.
 */
typedef struct SegSchedule SegSchedule;

/**
 * A dense `f32` tensor in interchange layout.
 */
typedef struct SegTensor SegTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *seg_version(void);

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *seg_last_error(void);

/**
 * Builds a feature map from `h * w * d` row-major floats. With `normalize`
 * set, pixel vectors are scaled to unit norm; otherwise each must already
 * have norm within `1e-4` of one and is rescaled exactly.
 *
 * # Safety
 * `data` must point to `h * w * d` floats and `out` must be writable.
 */
enum SegStatus seg_feature_map_new(size_t h,
                                   size_t w,
                                   size_t d,
                                   const float *data,
                                   bool normalize,
                                   struct SegFeatureMap **out);

/**
 * # Safety
 * `fm` must be null or a handle from [`seg_feature_map_new`] not yet freed.
 */
void seg_feature_map_free(struct SegFeatureMap *fm);

/**
 * For each generated pixel, the index of the nearest original pixel under
 * cosine distance (ties to the lowest index). `workers` of 0 or 1 searches
 * on the calling thread. `indices` holds `h * w` entries; `distances` may be
 * null or hold `h * w` entries.
 *
 * # Safety
 * Handles must be live; buffers must hold `len` elements.
 */
enum SegStatus seg_find_correspondence(const struct SegFeatureMap *orig,
                                       const struct SegFeatureMap *gen,
                                       size_t workers,
                                       size_t *indices,
                                       float *distances,
                                       size_t len);

/**
 * Mixes an `h * w` soft mask with itself at the matched locations `delta`,
 * writing `h * w` values to `out`.
 *
 * # Safety
 * `mask`, `delta` and `out` must hold `h * w` elements.
 */
enum SegStatus seg_mix_probabilities(size_t h,
                                     size_t w,
                                     const float *mask,
                                     const size_t *delta,
                                     float beta,
                                     float cf_low,
                                     float cf_high,
                                     float *out);

/**
 * Cross-attention injection mask for an `h * w` binary mask: row `i` is one
 * at the `tokens` columns when pixel `i` is foreground. Writes
 * `h * w * key_len` bytes.
 *
 * # Safety
 * `bits` holds `h * w` bytes, `tokens` holds `n_tokens` entries, `out`
 * holds `h * w * key_len` bytes.
 */
enum SegStatus seg_cross_injection(size_t h,
                                   size_t w,
                                   const uint8_t *bits,
                                   const size_t *tokens,
                                   size_t n_tokens,
                                   size_t key_len,
                                   uint8_t *out);

/**
 * Self-attention injection mask `S S^T` for an `h * w` binary mask. Writes
 * `(h * w)^2` bytes.
 *
 * # Safety
 * `bits` holds `h * w` bytes and `out` holds `(h * w)^2` bytes.
 */
enum SegStatus seg_self_injection(size_t h, size_t w, const uint8_t *bits, uint8_t *out);

/**
 * `softmax((Q K^T + alpha A) / sqrt(dim))` for `q_len x dim` queries and
 * `k_len x dim` keys. `mask` holds `q_len * k_len` bytes; `out` receives
 * `q_len * k_len` weights.
 *
 * # Safety
 * Buffers must hold the lengths stated above.
 */
enum SegStatus seg_inject_attention(size_t q_len,
                                    size_t k_len,
                                    size_t dim,
                                    const float *queries,
                                    const float *keys,
                                    const uint8_t *mask,
                                    enum SegAttentionKind kind,
                                    float alpha,
                                    double *out);

/**
 * Linear-beta schedule over `steps` training steps.
 *
 * # Safety
 * `out` must be writable.
 */
enum SegStatus seg_schedule_linear(size_t steps,
                                   double beta_start,
                                   double beta_end,
                                   struct SegSchedule **out);

/**
 * The default 1000-step schedule.
 *
 * # Safety
 * `out` must be writable.
 */
enum SegStatus seg_schedule_default(struct SegSchedule **out);

/**
 * # Safety
 * `s` must be null or a live schedule handle.
 */
void seg_schedule_free(struct SegSchedule *s);

/**
 * Cumulative signal fraction at timestep `t`.
 *
 * # Safety
 * `s` must be live and `out` writable.
 */
enum SegStatus seg_schedule_alpha_bar(const struct SegSchedule *s, size_t t, double *out);

/**
 * `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps` over `h * w * c` values.
 *
 * # Safety
 * `x0`, `eps` and `out` must hold `h * w * c` values; `s` must be live.
 */
enum SegStatus seg_add_noise(const struct SegSchedule *s,
                             size_t h,
                             size_t w,
                             size_t c,
                             const double *x0,
                             const double *eps,
                             size_t t,
                             double *out);

/**
 * `x0_hat = (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)` over `h * w * c` values.
 *
 * # Safety
 * `x_t`, `eps` and `out` must hold `h * w * c` values; `s` must be live.
 */
enum SegStatus seg_predict_x0(const struct SegSchedule *s,
                              size_t h,
                              size_t w,
                              size_t c,
                              const double *x_t,
                              const double *eps,
                              size_t t,
                              double *out);

/**
 * Tensor of `rank` dims with their product of floats.
 *
 * # Safety
 * `dims` holds `rank` entries, `data` their product; `out` writable.
 */
enum SegStatus seg_tensor_new(size_t rank,
                              const size_t *dims,
                              const float *data,
                              struct SegTensor **out);

/**
 * Reads a tensor file.
 *
 * # Safety
 * `file` is a nul-terminated path; `out` writable.
 */
enum SegStatus seg_tensor_read(const char *file, struct SegTensor **out);

/**
 * Writes a tensor file.
 *
 * # Safety
 * `t` must be live; `file` is a nul-terminated path.
 */
enum SegStatus seg_tensor_write(const struct SegTensor *t, const char *file);

/**
 * Rank of a tensor, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or live.
 */
size_t seg_tensor_rank(const struct SegTensor *t);

/**
 * Number of floats in a tensor, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or live.
 */
size_t seg_tensor_len(const struct SegTensor *t);

/**
 * Copies the dims into `dims`, which holds `cap` entries.
 *
 * # Safety
 * `t` must be live; `dims` must hold `cap` entries.
 */
enum SegStatus seg_tensor_dims(const struct SegTensor *t, size_t *dims, size_t cap);

/**
 * Borrowed pointer to the tensor payload, valid until the handle is freed.
 *
 * # Safety
 * `t` must be null or live.
 */
const float *seg_tensor_data(const struct SegTensor *t);

/**
 * # Safety
 * `t` must be null or a live tensor handle.
 */
void seg_tensor_free(struct SegTensor *t);

/**
 * Mean IoU over `n` label masks of `h * w` pixels, stored back to back.
 * Ground-truth label 255 is ignored. Classes absent from both masks drop
 * out of the mean.
 *
 * # Safety
 * `preds` and `gts` hold `n * h * w` bytes; `out` writable.
 */
enum SegStatus seg_mean_iou(size_t n,
                            size_t h,
                            size_t w,
                            const uint8_t *preds,
                            const uint8_t *gts,
                            size_t num_classes,
                            bool per_image,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGREFINE_H */
