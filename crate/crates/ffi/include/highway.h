#ifndef HIGHWAY_H
#define HIGHWAY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
enum HwStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  HW_STATUS_OK = 0,
  HW_STATUS_NULL_ARGUMENT = 1,
  HW_STATUS_INVALID_UTF8 = 2,
  HW_STATUS_PARSE = 3,
  HW_STATUS_IO = 4,
  HW_STATUS_OUT_OF_RANGE = 5,
  HW_STATUS_BUFFER_TOO_SMALL = 6,
  HW_STATUS_PANIC = 7,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum HwStatus HwStatus;
#else
typedef int32_t HwStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * A finished simulation with its trace kept in memory.
 */
typedef struct HwRun HwRun;

/**
 * A parsed scenario.
 */
typedef struct HwScenario HwScenario;

/**
 * The result of replaying a trace.
 */
typedef struct HwVerdict HwVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *hw_last_error(void);

/**
 * Static description of a status code.
 */
const char *hw_status_str(int32_t status);

/**
 * `(2q - n)(1 - 2^-k) > t`, evaluated exactly.
 */
bool hw_final_predicate(uint64_t n, uint64_t q, uint32_t k, uint64_t t);

/**
 * Parses scenario text. On success `*out` owns a new handle.
 *
 * # Safety
 * `src` must be a NUL-terminated string and `out` a valid pointer.
 */
HwStatus hw_scenario_parse(const char *src, struct HwScenario **out);

/**
 * # Safety
 * `s` must come from `hw_scenario_parse` and not be freed already.
 */
HwStatus hw_scenario_set_seed(struct HwScenario *s, uint64_t seed);

/**
 * # Safety
 * `s` must be NULL or come from `hw_scenario_parse`.
 */
void hw_scenario_free(struct HwScenario *s);

/**
 * Simulates the scenario to its horizon.
 *
 * # Safety
 * `s` must be a live scenario handle and `out` a valid pointer.
 */
HwStatus hw_run(const struct HwScenario *s, struct HwRun **out);

/**
 * Hex SHA-256 digest of the trace (64 characters plus NUL).
 *
 * # Safety
 * `r` must be a live run handle; `buf` must hold `len` bytes; `needed`
 * may be NULL.
 */
HwStatus hw_run_digest(const struct HwRun *r, char *buf, size_t len, size_t *needed);

/**
 * Writes the trace file.
 *
 * # Safety
 * `r` must be a live run handle and `path` a NUL-terminated string.
 */
HwStatus hw_run_write_trace(const struct HwRun *r, const char *path);

/**
 * Height of the last block `validator` finalized at `threshold`.
 *
 * # Safety
 * `r` must be a live run handle and `height` a valid pointer.
 */
HwStatus hw_run_chain_height(const struct HwRun *r,
                             uint32_t validator,
                             uint64_t threshold,
                             uint64_t *height);

/**
 * # Safety
 * `r` must be NULL or come from `hw_run`.
 */
void hw_run_free(struct HwRun *r);

/**
 * Replays a trace file at the given thresholds.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `thresholds` must point to
 * `count` values, and `out` must be a valid pointer.
 */
HwStatus hw_check_trace(const char *path,
                        const uint64_t *thresholds,
                        size_t count,
                        struct HwVerdict **out);

/**
 * True when no pair of honest chains conflicts beyond what the observed
 * equivocation weight permits.
 *
 * # Safety
 * `v` must be a live verdict handle and `clean` a valid pointer.
 */
HwStatus hw_verdict_is_clean(const struct HwVerdict *v, bool *clean);

/**
 * Number of conflicting chain pairs, permitted or not.
 *
 * # Safety
 * `v` must be a live verdict handle and `count` a valid pointer.
 */
HwStatus hw_verdict_conflicts(const struct HwVerdict *v, size_t *count);

/**
 * Number of validators whose lower-threshold chain fails to extend a
 * higher-threshold one.
 *
 * # Safety
 * `v` must be a live verdict handle and `count` a valid pointer.
 */
HwStatus hw_verdict_order_violations(const struct HwVerdict *v, size_t *count);

/**
 * Height of `validator`'s replayed chain at `threshold`.
 *
 * # Safety
 * `v` must be a live verdict handle and `height` a valid pointer.
 */
HwStatus hw_verdict_chain_height(const struct HwVerdict *v,
                                 uint32_t validator,
                                 uint64_t threshold,
                                 uint64_t *height);

/**
 * JSON rendering of the verdict, copied like `hw_run_digest`.
 *
 * # Safety
 * As for `hw_run_digest`.
 */
HwStatus hw_verdict_json(const struct HwVerdict *v, char *buf, size_t len, size_t *needed);

/**
 * # Safety
 * `v` must be NULL or come from `hw_check_trace`.
 */
void hw_verdict_free(struct HwVerdict *v);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIGHWAY_H */
