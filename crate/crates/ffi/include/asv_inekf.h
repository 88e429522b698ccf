#ifndef ASV_INEKF_H
#define ASV_INEKF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AsvStatus {
  ASV_STATUS_OK = 0,
  ASV_STATUS_NULL_POINTER = 1,
  ASV_STATUS_INVALID_INPUT = 2,
  ASV_STATUS_NON_FINITE = 3,
  ASV_STATUS_BRANCH_AMBIGUITY = 4,
  ASV_STATUS_GIMBAL_LOCK = 5,
  ASV_STATUS_UNOBSERVABLE = 6,
  ASV_STATUS_GATED = 7,
  ASV_STATUS_NO_HORIZON = 8,
  ASV_STATUS_HORIZON_OUT_OF_FRAME = 9,
  ASV_STATUS_DEGENERATE_SEGMENT = 10,
  ASV_STATUS_INTERNAL = 11,
  ASV_STATUS_PANIC = 12,
} AsvStatus;

typedef enum AsvFilterKind {
  ASV_FILTER_KIND_INEKF = 0,
  ASV_FILTER_KIND_MEKF = 1,
} AsvFilterKind;

/**
 * Opaque estimator handle.
 */
typedef struct AsvEstimator AsvEstimator;

/**
 * Filter tuning. Fill with [`asv_params_default`] and adjust.
 */
typedef struct AsvParams {
  /**
   * Per-sample gyro std, rad/s, at `imu_rate_hz`.
   */
  double gyro_std;
  /**
   * Per-sample accelerometer std, m/s², at `imu_rate_hz`.
   */
  double accel_std;
  double imu_rate_hz;
  /**
   * Position random-walk density, m²/s.
   */
  double position_random_walk;
  /**
   * Orientation innovations above this angle, rad, are skipped.
   */
  double gate_rad;
} AsvParams;

/**
 * Rotation (row-major, body to world), velocity and position in the world frame.
 */
typedef struct AsvPose {
  double r[9];
  double v[3];
  double p[3];
} AsvPose;

/**
 * Roll and pitch reading, rad, with its stds.
 */
typedef struct AsvRollPitch {
  double t;
  double phi;
  double theta;
  double sigma_phi;
  double sigma_theta;
} AsvRollPitch;

/**
 * Updates that were rejected rather than applied.
 */
typedef struct AsvSkipCounts {
  uint32_t gated;
  uint32_t gimbal_lock;
  uint32_t unobservable;
} AsvSkipCounts;

/**
 * A detected line segment in pixels, image y pointing down.
 */
typedef struct AsvSegment {
  double x0;
  double y0;
  double x1;
  double y1;
} AsvSegment;

typedef struct AsvCamera {
  double f_x;
  double f_y;
  double c_x;
  double c_y;
  double width;
  double height;
} AsvCamera;

/**
 * Camera height above the sea and the Earth radius, m.
 */
typedef struct AsvHorizonGeometry {
  double camera_height_v;
  double earth_radius_re;
} AsvHorizonGeometry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated description of `status`.
 */
const char *asv_status_message(enum AsvStatus status);

/**
 * Default tuning: gyro 0.002 rad/s and accel 0.04 m/s² per sample at 100 Hz,
 * position walk 1e-6 m²/s, 3 rad gate.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `AsvParams`.
 */
enum AsvStatus asv_params_default(struct AsvParams *out);

/**
 * Initial covariance (81 doubles) for a belief at `x0` with isotropic rotation
 * std `sigma_rot` (rad) and per-axis velocity and position stds in the world frame.
 *
 * # Safety
 * Pointers must be null or valid: `sigma_vel`/`sigma_pos` for 3 doubles, `out` for 81.
 */
enum AsvStatus asv_initial_covariance(enum AsvFilterKind kind,
                                      const struct AsvPose *x0,
                                      double sigma_rot,
                                      const double *sigma_vel,
                                      const double *sigma_pos,
                                      double *out);

/**
 * Creates an estimator at time `t0` with belief `x0` and covariance `cov`
 * (81 doubles, row-major, symmetric positive definite, in the filter's own
 * error coordinates). `params` may be null for the defaults.
 *
 * # Safety
 * `x0` must point to an `AsvPose`, `cov` to 81 doubles, `params` to an
 * `AsvParams` or be null, and `out` to writable storage for one handle.
 */
enum AsvStatus asv_estimator_new(enum AsvFilterKind kind,
                                 const struct AsvPose *x0,
                                 const double *cov,
                                 double t0,
                                 const struct AsvParams *params,
                                 struct AsvEstimator **out);

/**
 * Releases a handle from [`asv_estimator_new`]. Null is ignored.
 *
 * # Safety
 * `est` must be null or a handle not yet freed.
 */
void asv_estimator_free(struct AsvEstimator *est);

/**
 * Propagates over `dt` seconds (0 < dt ≤ 0.1) with a body-frame gyro rate
 * (rad/s) and specific force (m/s²).
 *
 * # Safety
 * `est` must be a live handle; `gyro` and `accel` must point to 3 doubles.
 */
enum AsvStatus asv_estimator_predict(struct AsvEstimator *est,
                                     const double *gyro,
                                     const double *accel,
                                     double dt);

/**
 * Roll/pitch update with yaw left free. `applied` (nullable) receives 0 when the
 * update was skipped by the gate or as unobservable; that is not an error.
 *
 * # Safety
 * `est` must be a live handle; `applied` must be null or writable.
 */
enum AsvStatus asv_estimator_update_roll_pitch(struct AsvEstimator *est,
                                               struct AsvRollPitch reading,
                                               int *applied);

/**
 * Heading update with roll and pitch left free. `psi` in rad, counterclockwise
 * from the world x axis.
 *
 * # Safety
 * `est` must be a live handle; `applied` must be null or writable.
 */
enum AsvStatus asv_estimator_update_heading(struct AsvEstimator *est,
                                            double t,
                                            double psi,
                                            double sigma_psi,
                                            int *applied);

/**
 * Position fix in the world frame, m, with horizontal and vertical stds.
 *
 * # Safety
 * `est` must be a live handle; `xyz` must point to 3 doubles; `applied` must be null or writable.
 */
enum AsvStatus asv_estimator_update_gps(struct AsvEstimator *est,
                                        double t,
                                        const double *xyz,
                                        double sigma_xy,
                                        double sigma_z,
                                        int *applied);

/**
 * Current pose and, if `t` is not null, its time.
 *
 * # Safety
 * `est` must be a live handle; `out` must be writable; `t` must be null or writable.
 */
enum AsvStatus asv_estimator_get_state(const struct AsvEstimator *est,
                                       struct AsvPose *out,
                                       double *t);

/**
 * Current covariance, 81 doubles row-major, in the filter's own error coordinates.
 *
 * # Safety
 * `est` must be a live handle; `out` must point to 81 writable doubles.
 */
enum AsvStatus asv_estimator_get_covariance(const struct AsvEstimator *est, double *out);

/**
 * Counts of updates skipped so far.
 *
 * # Safety
 * `est` must be a live handle; `out` must be writable.
 */
enum AsvStatus asv_estimator_skips(const struct AsvEstimator *est, struct AsvSkipCounts *out);

/**
 * Roll and pitch from the best of `n` detected segments. Segments steeper than
 * `90° − vertical_cutoff_deg` are discarded; `mount_pitch` (rad) is the camera's
 * pitch relative to the body.
 *
 * # Safety
 * `segments` must point to `n` segments (or be null when `n` is 0); `camera`,
 * `geometry` and `out` must be valid.
 */
enum AsvStatus asv_horizon_to_reading(const struct AsvSegment *segments,
                                      size_t n,
                                      const struct AsvCamera *camera,
                                      const struct AsvHorizonGeometry *geometry,
                                      double vertical_cutoff_deg,
                                      double mount_pitch,
                                      double sigma,
                                      double t,
                                      struct AsvRollPitch *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASV_INEKF_H */
