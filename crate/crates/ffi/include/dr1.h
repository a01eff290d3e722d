#ifndef DR1_H
#define DR1_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Dr1Status {
  DR1_STATUS_OK = 0,
  DR1_STATUS_NULL_POINTER = 1,
  DR1_STATUS_INVALID_UTF8 = 2,
  DR1_STATUS_CONFIG = 3,
  DR1_STATUS_ARGUMENT = 4,
  DR1_STATUS_UNKNOWN_INDEX = 5,
  DR1_STATUS_IO = 6,
  DR1_STATUS_PARSE = 7,
  DR1_STATUS_FEATURE = 8,
  DR1_STATUS_CHECKPOINT = 9,
  DR1_STATUS_NUMERIC = 10,
  DR1_STATUS_BALANCING = 11,
  DR1_STATUS_LEAKAGE = 12,
  DR1_STATUS_BUFFER_TOO_SMALL = 13,
  DR1_STATUS_PANIC = 14,
} Dr1Status;

/**
 * Opaque policy handle.
 */
typedef struct Dr1Policy Dr1Policy;

/**
 * Binary metrics as fractions in [0, 1], plus the confusion counts.
 */
typedef struct Dr1Metrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_;
} Dr1Metrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dr1_version(void);

/**
 * Copy the calling thread's last error message into `buf`.
 *
 * Returns the message length plus one for the terminator. When that is
 * larger than `len` the message is truncated; pass `len == 0` to query
 * the size. An empty message means the last call succeeded.
 *
 * # Safety
 * `buf` must be valid for `len` bytes, or null when `len` is 0.
 */
size_t dr1_last_error_message(char *buf, size_t len);

/**
 * 1.0 when `|predicted - truth| <= delta`, else 0.0.
 */
double dr1_r_cold(double predicted, double truth, double delta);

/**
 * 1.0 when the labels match, else 0.0.
 */
double dr1_r_task(uint8_t predicted_label, uint8_t true_label);

/**
 * Parse the `<answer>\boxed{v}</answer>` value out of a completion.
 *
 * # Safety
 * `completion` must be a NUL-terminated string; `out` must be writable.
 */
enum Dr1Status dr1_parse_boxed_answer(const char *completion, double *out);

/**
 * Tolerance `delta` of `index` under profile `"amc"` or `"adni"`.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be writable.
 */
enum Dr1Status dr1_tolerance(const char *profile_name, const char *index, double *out);

/**
 * Group-standardized advantages of `n` rewards, written to `out`.
 *
 * # Safety
 * `rewards` and `out` must each hold `n` doubles.
 */
enum Dr1Status dr1_compute_advantages(const double *rewards, size_t n, double *out);

/**
 * Binary metrics of `n` 0/1 predictions against 0/1 labels.
 *
 * # Safety
 * `predictions` and `labels` must each hold `n` bytes; `out` must be
 * writable.
 */
enum Dr1Status dr1_compute_metrics(const uint8_t *predictions,
                                   const uint8_t *labels,
                                   size_t n,
                                   struct Dr1Metrics *out);

/**
 * Load a policy checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum Dr1Status dr1_policy_load(const char *path, struct Dr1Policy **out);

/**
 * Release a handle from [`dr1_policy_load`]. Null is ignored.
 *
 * # Safety
 * `policy` must come from `dr1_policy_load` and not be freed twice.
 */
void dr1_policy_free(struct Dr1Policy *policy);

/**
 * Number of answer values of `task` (an index name or `"diagnosis"`).
 *
 * # Safety
 * `policy` must be a live handle; `task` NUL-terminated; `out` writable.
 */
enum Dr1Status dr1_policy_num_actions(const struct Dr1Policy *policy_handle,
                                      const char *task,
                                      size_t *out);

/**
 * Answer values of `task`, in action order.
 *
 * # Safety
 * `values` must hold `cap` doubles; `written` must be writable.
 */
enum Dr1Status dr1_policy_actions(const struct Dr1Policy *policy_handle,
                                  const char *task,
                                  double *values,
                                  size_t cap,
                                  size_t *written);

/**
 * Answer distribution of `task` for a linearized history prompt and a
 * forecast gap in months.
 *
 * `*written` is set to the number of actions even when the buffer is too
 * small.
 *
 * # Safety
 * `probs` must hold `cap` doubles; strings NUL-terminated.
 */
enum Dr1Status dr1_policy_distribution(const struct Dr1Policy *policy_handle,
                                       const char *task,
                                       const char *prompt,
                                       double gap_months,
                                       double *probs,
                                       size_t cap,
                                       size_t *written);

/**
 * Most probable answer value of `task` for the prompt.
 *
 * # Safety
 * Strings NUL-terminated; `out` writable.
 */
enum Dr1Status dr1_policy_predict(const struct Dr1Policy *policy_handle,
                                  const char *task,
                                  const char *prompt,
                                  double gap_months,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DR1_H */
