#ifndef PRECSWITCH_H
#define PRECSWITCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PrecswitchStatus {
  PRECSWITCH_STATUS_OK = 0,
  PRECSWITCH_STATUS_NULL_ARGUMENT = 1,
  PRECSWITCH_STATUS_INVALID_UTF8 = 2,
  PRECSWITCH_STATUS_IO = 3,
  PRECSWITCH_STATUS_CONFIG = 4,
  PRECSWITCH_STATUS_FORMAT = 5,
  /**
   * No schedule keeps the output inside the band.
   */
  PRECSWITCH_STATUS_INFEASIBLE = 6,
  /**
   * The node limit was hit before any feasible schedule was found.
   */
  PRECSWITCH_STATUS_LIMIT_WITHOUT_INCUMBENT = 7,
  /**
   * The output buffer is smaller than the reported count.
   */
  PRECSWITCH_STATUS_BUFFER_TOO_SMALL = 8,
  PRECSWITCH_STATUS_INTERNAL = 9,
  PRECSWITCH_STATUS_PANIC = 10,
} PrecswitchStatus;

/**
 * How the branch-and-bound search ended.
 */
typedef enum PrecswitchSolveStatus {
  /**
   * Parsed schedule without a status line.
   */
  PRECSWITCH_SOLVE_STATUS_UNKNOWN = 0,
  PRECSWITCH_SOLVE_STATUS_OPTIMAL = 1,
  PRECSWITCH_SOLVE_STATUS_GAP_LIMIT = 2,
  PRECSWITCH_SOLVE_STATUS_NODE_LIMIT = 3,
  PRECSWITCH_SOLVE_STATUS_INFEASIBLE = 4,
} PrecswitchSolveStatus;

/**
 * Outcome of the bit-accurate emulation.
 */
typedef enum PrecswitchEmulation {
  PRECSWITCH_EMULATION_PASSED = 0,
  PRECSWITCH_EMULATION_VIOLATED = 1,
  PRECSWITCH_EMULATION_NON_FINITE = 2,
} PrecswitchEmulation;

/**
 * Parsed run configuration.
 */
typedef struct PrecswitchConfig PrecswitchConfig;

/**
 * A precision schedule with its solver summary.
 */
typedef struct PrecswitchSchedule PrecswitchSchedule;

/**
 * Verification of a schedule against the error-bounded model and emulation.
 */
typedef struct PrecswitchReport {
  bool model_passed;
  /**
   * First sample outside the band in the model, or -1.
   */
  int64_t model_violation_sample;
  enum PrecswitchEmulation emulation;
  /**
   * First offending emulated sample, or -1 when the emulation passed.
   */
  int64_t emulation_sample;
  double model_cost;
  double emulated_cost;
  double runtime;
  double objective;
  size_t switches;
  double lo_fraction;
} PrecswitchReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *precswitch_last_error(void);

/**
 * Reads a JSON run configuration from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PrecswitchStatus precswitch_config_from_path(const char *path, struct PrecswitchConfig **out);

/**
 * Parses a JSON run configuration held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PrecswitchStatus precswitch_config_from_json(const char *json, struct PrecswitchConfig **out);

/**
 * # Safety
 * `config` must be NULL or a handle from this library not yet freed.
 */
void precswitch_config_free(struct PrecswitchConfig *config);

/**
 * Switching windows as inclusive sample ranges. `count` receives the
 * window count even when the buffers are too small.
 *
 * # Safety
 * `starts` and `ends` must hold `capacity` entries (or be NULL with
 * capacity 0); `count` must be writable.
 */
enum PrecswitchStatus precswitch_windows(const struct PrecswitchConfig *config,
                                         size_t *starts,
                                         size_t *ends,
                                         size_t capacity,
                                         size_t *count);

/**
 * Synthesizes the optimal schedule. A schedule is returned on node-limit
 * exits too; check [`precswitch_schedule_solve_status`].
 *
 * # Safety
 * `config` must be a live handle and `out` a writable pointer.
 */
enum PrecswitchStatus precswitch_synthesize(const struct PrecswitchConfig *config,
                                            struct PrecswitchSchedule **out);

/**
 * Parses the text schedule format.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PrecswitchStatus precswitch_schedule_parse(const char *text, struct PrecswitchSchedule **out);

/**
 * The schedule in the text format, to be released with
 * [`precswitch_string_free`]. NULL when `schedule` is NULL.
 *
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
char *precswitch_schedule_to_text(const struct PrecswitchSchedule *schedule);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library not yet freed.
 */
void precswitch_string_free(char *s);

/**
 * Precision per sample `0..=N`, 1 for hi and 0 for lo.
 *
 * # Safety
 * `levels` must hold `capacity` bytes (or be NULL with capacity 0);
 * `count` must be writable.
 */
enum PrecswitchStatus precswitch_schedule_levels(const struct PrecswitchSchedule *schedule,
                                                 uint8_t *levels,
                                                 size_t capacity,
                                                 size_t *count);

/**
 * Number of precision changes, or 0 for NULL.
 *
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
size_t precswitch_schedule_switch_count(const struct PrecswitchSchedule *schedule);

/**
 * Solver objective, NaN when unknown.
 *
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
double precswitch_schedule_objective(const struct PrecswitchSchedule *schedule);

/**
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
enum PrecswitchSolveStatus precswitch_schedule_solve_status(const struct PrecswitchSchedule *schedule);

/**
 * # Safety
 * `schedule` must be NULL or a handle from this library not yet freed.
 */
void precswitch_schedule_free(struct PrecswitchSchedule *schedule);

/**
 * Checks a schedule in the error-bounded model and in bit-accurate
 * emulation of both formats.
 *
 * # Safety
 * `config` and `schedule` must be live handles and `out` writable.
 */
enum PrecswitchStatus precswitch_verify(const struct PrecswitchConfig *config,
                                        const struct PrecswitchSchedule *schedule,
                                        struct PrecswitchReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRECSWITCH_H */
