#ifndef POVPOOL_H
#define POVPOOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Pooling operator selector.
 */
typedef enum PovOperator {
  POV_OPERATOR_WA = 0,
  POV_OPERATOR_WAE = 1,
  POV_OPERATOR_WAR = 2,
  POV_OPERATOR_BBLF = 3,
} PovOperator;

/**
 * Result codes. The first four match the command-line exit codes.
 */
typedef enum PovStatus {
  POV_STATUS_OK = 0,
  POV_STATUS_IO = 1,
  POV_STATUS_PARAM = 2,
  POV_STATUS_INTEGRITY = 3,
  POV_STATUS_NULL_POINTER = 4,
  POV_STATUS_INVALID_UTF8 = 5,
  POV_STATUS_PANIC = 6,
} PovStatus;

/**
 * Opaque pooling configuration.
 */
typedef struct PovPooler PovPooler;

/**
 * Opaque parsed subtitle track.
 */
typedef struct PovSubtitles PovSubtitles;

/**
 * Context-length estimate for one clip.
 */
typedef struct PovBudget {
  size_t k;
  size_t text_tokens;
  size_t pooled_tokens;
  size_t unpooled_tokens;
  double reduction_ratio;
  uint64_t reduction_ratio_rounded;
} PovBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or NULL. Valid until the next call
 * into this library on the same thread.
 */
const char *pov_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *pov_status_name(enum PovStatus status);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void pov_string_free(char *s);

/**
 * Creates a pooler. Pass NaN for `lambda`, `alpha` or `sigma` to take the
 * operator's default; parameters the operator does not use must be NaN.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum PovStatus pov_pooler_new(enum PovOperator op,
                              uint32_t fps,
                              double lambda,
                              double alpha,
                              double sigma,
                              struct PovPooler **out);

/**
 * Frames per window the pooler expects, or 0 for NULL.
 *
 * # Safety
 * `pooler` must be NULL or a live handle.
 */
uint32_t pov_pooler_fps(const struct PovPooler *pooler);

/**
 * Pools one second. `frames` holds `fps` RGB8 frames of `width`×`height`
 * back to back; `out` receives one RGB8 frame (`width*height*3` bytes).
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum PovStatus pov_pooler_pool_window(const struct PovPooler *pooler,
                                      uint32_t width,
                                      uint32_t height,
                                      const uint8_t *frames,
                                      size_t frames_len,
                                      uint8_t *out,
                                      size_t out_len);

/**
 * Releases a pooler. NULL is ignored.
 *
 * # Safety
 * `pooler` must come from [`pov_pooler_new`] and not have been freed already.
 */
void pov_pooler_free(struct PovPooler *pooler);

/**
 * Parses SubRip or WebVTT text held in memory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum PovStatus pov_subtitles_parse(const char *text, struct PovSubtitles **out);

/**
 * Reads and parses a subtitle file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum PovStatus pov_subtitles_open(const char *path, struct PovSubtitles **out);

/**
 * Number of cues, or 0 for NULL.
 *
 * # Safety
 * `subs` must be NULL or a live handle.
 */
size_t pov_subtitles_count(const struct PovSubtitles *subs);

/**
 * Subtitle text overlapping 1-based `second`; free with [`pov_string_free`].
 *
 * # Safety
 * `subs` must be a live handle; `out` a valid pointer slot.
 */
enum PovStatus pov_subtitles_second_text(const struct PovSubtitles *subs,
                                         size_t second,
                                         char **out);

/**
 * Releases a subtitle track. NULL is ignored.
 *
 * # Safety
 * `subs` must come from this library and not have been freed already.
 */
void pov_subtitles_free(struct PovSubtitles *subs);

/**
 * Budget for a clip of `seconds` whole seconds capped at `s_max`, with the
 * same subtitle token count in every second.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PovStatus pov_budget(size_t seconds,
                          size_t s_max,
                          uint32_t fps,
                          size_t m,
                          size_t n_sys_q,
                          size_t text_per_second,
                          struct PovBudget *out);

/**
 * Bag-of-tokens F1 after normalization.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` a valid pointer.
 */
enum PovStatus pov_token_f1(const char *pred, const char *reference, double *out);

/**
 * BLEU up to order `max_n` with brevity penalty.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` a valid pointer.
 */
enum PovStatus pov_bleu(const char *pred, const char *reference, size_t max_n, double *out);

/**
 * ROUGE-L F-measure.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` a valid pointer.
 */
enum PovStatus pov_rouge_l(const char *pred, const char *reference, double *out);

/**
 * Mean SFT loss. `logp` holds every record's token log-probabilities back
 * to back; `lengths[i]` is the token count of record `i`.
 *
 * # Safety
 * `logp` must hold the sum of `lengths`; `lengths` must hold `n_records`.
 */
enum PovStatus pov_sft_loss(const double *logp,
                            const size_t *lengths,
                            size_t n_records,
                            double *out);

/**
 * Mean DPO loss over `n_records` records given per-record sequence
 * log-likelihoods under the policy and the frozen reference.
 *
 * # Safety
 * Each array must hold `n_records` values; `out` must be a valid pointer.
 */
enum PovStatus pov_dpo_loss(const double *policy_pos,
                            const double *policy_neg,
                            const double *ref_pos,
                            const double *ref_neg,
                            size_t n_records,
                            double beta,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POVPOOL_H */
