#ifndef SWARMLOC_H
#define SWARMLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SwStatus {
  SW_STATUS_OK = 0,
  SW_STATUS_NULL_POINTER = 1,
  SW_STATUS_INVALID_ARGUMENT = 2,
  SW_STATUS_INVALID_UTF8 = 3,
  SW_STATUS_IO = 4,
  SW_STATUS_CONFIG = 5,
  /**
   * No estimate, message or value is available yet.
   */
  SW_STATUS_NOT_AVAILABLE = 6,
  /**
   * The output buffer is too small; the required length was written.
   */
  SW_STATUS_BUFFER_TOO_SMALL = 7,
  SW_STATUS_DIVERGED = 8,
  SW_STATUS_PANIC = 99,
} SwStatus;

typedef enum SwEstimateStatus {
  SW_ESTIMATE_STATUS_ODOMETRY = 0,
  SW_ESTIMATE_STATUS_PROPAGATED = 1,
  SW_ESTIMATE_STATUS_STALE = 2,
} SwEstimateStatus;

/**
 * One drone's estimator plus the messages it wants broadcast.
 */
typedef struct SwEstimator SwEstimator;

/**
 * A finished scenario run.
 */
typedef struct SwRun SwRun;

/**
 * 4-DoF pose: position in meters and yaw in radians.
 */
typedef struct SwPose4 {
  double x;
  double y;
  double z;
  double yaw;
} SwPose4;

typedef struct SwEstimate {
  /**
   * Time of the VIO sample the estimate was propagated with.
   */
  double t;
  struct SwPose4 pose;
  /**
   * Row-major attitude with roll and pitch taken from VIO.
   */
  double rotation[9];
  enum SwEstimateStatus status;
} SwEstimate;

/**
 * Headline metrics of a scenario run. Unavailable values are NaN.
 */
typedef struct SwSummary {
  bool all_initialized;
  bool all_converged;
  bool any_diverged;
  double re_pos;
  double vio_re_pos;
  double ate_pos;
  double drift;
  double vio_drift;
} SwSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sw_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null; `len` must be valid or null.
 */
enum SwStatus sw_last_error(char *buf, size_t cap, size_t *len);

/**
 * Creates an estimator for drone `id` with default parameters. `seed` must
 * be the same on every drone of a swarm.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum SwStatus sw_estimator_new(uint32_t id, uint64_t seed, struct SwEstimator **out);

/**
 * Creates an estimator from the `[estimator]` table of a scenario file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` must be valid.
 */
enum SwStatus sw_estimator_from_scenario(uint32_t id,
                                         const char *config_path,
                                         struct SwEstimator **out);

/**
 * # Safety
 * `h` must come from an `sw_estimator_*` constructor and not be used after.
 */
void sw_estimator_free(struct SwEstimator *h);

/**
 * Feeds one own VIO sample: position, yaw, and the roll and pitch of the
 * VIO attitude.
 *
 * # Safety
 * `h` must be a live estimator handle.
 */
enum SwStatus sw_estimator_push_vio(struct SwEstimator *h,
                                    double t,
                                    struct SwPose4 pose,
                                    double roll,
                                    double pitch);

/**
 * Feeds one own UWB range to drone `other`, meters.
 *
 * # Safety
 * `h` must be a live estimator handle.
 */
enum SwStatus sw_estimator_push_distance(struct SwEstimator *h, uint32_t other, double t, double d);

/**
 * Feeds one own detection of another drone. `dir` is the unit bearing in
 * the yaw-only body frame, `cam_rot` the row-major camera attitude and
 * `cam_pos` the camera offset. `label` is the detected drone when known,
 * negative otherwise.
 *
 * # Safety
 * `h` must be a live estimator handle; the arrays must hold 3, 9 and 3
 * values.
 */
enum SwStatus sw_estimator_push_detection(struct SwEstimator *h,
                                          double t,
                                          int64_t label,
                                          const double *dir,
                                          double inv_depth,
                                          const double *cam_rot,
                                          const double *cam_pos);

/**
 * Feeds a message received from another drone, as produced by
 * [`sw_estimator_pop_message`].
 *
 * # Safety
 * `h` must be a live estimator handle; `json` a NUL-terminated string.
 */
enum SwStatus sw_estimator_push_message(struct SwEstimator *h, const char *json);

/**
 * Pops the oldest message this estimator wants broadcast, as JSON. Returns
 * `NotAvailable` when the outbox is empty and `BufferTooSmall` (leaving the
 * message queued) when `cap` is short; `len` receives the length in both
 * the success and the short-buffer case.
 *
 * # Safety
 * `h` must be a live estimator handle; `buf` valid for `cap` bytes or null;
 * `len` valid or null.
 */
enum SwStatus sw_estimator_pop_message(struct SwEstimator *h, char *buf, size_t cap, size_t *len);

/**
 * Advances the estimator clock: assembles due frames and optimizes.
 *
 * # Safety
 * `h` must be a live estimator handle.
 */
enum SwStatus sw_estimator_advance(struct SwEstimator *h, double now);

/**
 * Writes 1 to `initialized` once the estimator has a relative frame.
 *
 * # Safety
 * `h` must be a live estimator handle; `initialized` valid.
 */
enum SwStatus sw_estimator_initialized(struct SwEstimator *h, int32_t *initialized);

/**
 * Pose of `drone` at `now` in this drone's local frame.
 *
 * # Safety
 * `h` must be a live estimator handle; `out` valid.
 */
enum SwStatus sw_estimator_estimate(struct SwEstimator *h,
                                    uint32_t drone,
                                    double now,
                                    struct SwEstimate *out);

/**
 * Simulates, estimates and scores a scenario file. `seed` overrides the
 * file's seed unless negative. When `out_dir` is non-null the run's
 * outputs are written there. Returns `Diverged` (with the run still
 * stored in `out`) if any solve diverged.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out_dir` NUL-terminated or null;
 * `out` valid.
 */
enum SwStatus sw_run_scenario(const char *config_path,
                              int64_t seed,
                              const char *out_dir,
                              struct SwRun **out);

/**
 * # Safety
 * `run` must come from [`sw_run_scenario`] and not be used after.
 */
void sw_run_free(struct SwRun *run);

/**
 * # Safety
 * `run` must be a live run handle; `out` valid.
 */
enum SwStatus sw_run_summary(const struct SwRun *run, struct SwSummary *out);

/**
 * Copies the full metrics report (JSON) into `buf`.
 *
 * # Safety
 * `run` must be a live run handle; `buf` valid for `cap` bytes or null;
 * `len` valid or null.
 */
enum SwStatus sw_run_report_json(const struct SwRun *run, char *buf, size_t cap, size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWARMLOC_H */
