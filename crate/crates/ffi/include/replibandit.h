#ifndef REPLIBANDIT_H
#define REPLIBANDIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RbStatus {
  RB_STATUS_OK = 0,
  RB_STATUS_NULL_POINTER = 1,
  RB_STATUS_INVALID_CONFIG = 2,
  RB_STATUS_INVALID_ARGUMENT = 3,
  RB_STATUS_SIMULATION = 4,
  RB_STATUS_IO = 5,
  RB_STATUS_PANIC = 6,
} RbStatus;

/**
 * Experiment configuration.
 */
typedef struct RbConfig RbConfig;

/**
 * Result of a replication study.
 */
typedef struct RbSummary RbSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call on the same thread.
 */
const char *rb_last_error_message(void);

/**
 * Static library version string.
 */
const char *rb_version(void);

/**
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum RbStatus rb_config_from_preset(const char *name, struct RbConfig **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum RbStatus rb_config_from_json(const char *json, struct RbConfig **out);

/**
 * Sets a dotted key, e.g. `"n"` to `"1000"`. The config is unchanged on failure.
 *
 * # Safety
 * `cfg` must come from `rb_config_from_*`; strings must be NUL-terminated.
 */
enum RbStatus rb_config_set(struct RbConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be valid; free the result with `rb_string_free`.
 */
enum RbStatus rb_config_to_json(const struct RbConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must come from `rb_config_from_*` and not be used afterwards.
 */
void rb_config_free(struct RbConfig *cfg);

/**
 * Runs every replication. `threads` = 0 uses all cores; results do not
 * depend on it.
 *
 * # Safety
 * `cfg` must be valid; `out` must be writable.
 */
enum RbStatus rb_replicate(const struct RbConfig *cfg, uint32_t threads, struct RbSummary **out);

/**
 * Number of replications, 0 for NULL.
 *
 * # Safety
 * `s` must be valid or NULL.
 */
size_t rb_summary_reps(const struct RbSummary *s);

/**
 * Writes mean θ̂ and the empirical variance.
 *
 * # Safety
 * `s` must be valid; outputs must be writable.
 */
enum RbStatus rb_summary_moments(const struct RbSummary *s, double *mean, double *variance);

/**
 * Copies up to `len` per-replication estimates into `buf`; `written` gets the count.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum RbStatus rb_summary_theta_hat(const struct RbSummary *s,
                                   double *buf,
                                   size_t len,
                                   size_t *written);

/**
 * Summary as the JSON written by the command line tool.
 *
 * # Safety
 * `s` must be valid; free the result with `rb_string_free`.
 */
enum RbStatus rb_summary_to_json(const struct RbSummary *s, char **out);

/**
 * # Safety
 * `s` must come from `rb_replicate` and not be used afterwards.
 */
void rb_summary_free(struct RbSummary *s);

/**
 * # Safety
 * `s` must come from this library.
 */
void rb_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPLIBANDIT_H */
