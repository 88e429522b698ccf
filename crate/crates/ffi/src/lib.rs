//! C ABI over the estimator and the horizon observer.
//!
//! Every function returns an [`AsvStatus`]. Estimators live behind an opaque
//! [`AsvEstimator`] handle created by [`asv_estimator_new`] and released by
//! [`asv_estimator_free`]. Matrices are row-major `double` arrays. A panic never
//! crosses the boundary; it is reported as `ASV_STATUS_PANIC`.

use std::ffi::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

use asv_inekf::estimator::{initial_covariance, Estimator, EstimatorParams, FilterKind};
use asv_inekf::horizon::{horizon_to_reading, CameraIntrinsics, HorizonGeometry, HorizonOptions, Segment};
use asv_inekf::inekf::{ImuSample, ProcessNoise, DEFAULT_GATE};
use asv_inekf::liegroup::{ExtendedPose, Matrix9, Rotation};
use asv_inekf::measurements::{GpsReading, HeadingReading, RollPitchReading};
use asv_inekf::Error;
use nalgebra::{Matrix3, Vector3};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NonFinite = 3,
    BranchAmbiguity = 4,
    GimbalLock = 5,
    Unobservable = 6,
    Gated = 7,
    NoHorizon = 8,
    HorizonOutOfFrame = 9,
    DegenerateSegment = 10,
    Internal = 11,
    Panic = 12,
}

impl From<&Error> for AsvStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::BranchAmbiguity { .. } => AsvStatus::BranchAmbiguity,
            Error::GimbalLock => AsvStatus::GimbalLock,
            Error::NonFinite(_) => AsvStatus::NonFinite,
            Error::InvalidInput(_) | Error::Config(_) | Error::Log { .. } => AsvStatus::InvalidInput,
            Error::Unobservable { .. } => AsvStatus::Unobservable,
            Error::Gated { .. } => AsvStatus::Gated,
            Error::NoHorizon => AsvStatus::NoHorizon,
            Error::HorizonOutOfFrame => AsvStatus::HorizonOutOfFrame,
            Error::DegenerateSegment => AsvStatus::DegenerateSegment,
            Error::Io(_) | Error::Csv(_) => AsvStatus::Internal,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsvFilterKind {
    Inekf = 0,
    Mekf = 1,
}

impl From<AsvFilterKind> for FilterKind {
    fn from(k: AsvFilterKind) -> Self {
        match k {
            AsvFilterKind::Inekf => FilterKind::Inekf,
            AsvFilterKind::Mekf => FilterKind::Mekf,
        }
    }
}

/// Rotation (row-major, body to world), velocity and position in the world frame.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AsvPose {
    pub r: [f64; 9],
    pub v: [f64; 3],
    pub p: [f64; 3],
}

/// Filter tuning. Fill with [`asv_params_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsvParams {
    /// Per-sample gyro std, rad/s, at `imu_rate_hz`.
    pub gyro_std: f64,
    /// Per-sample accelerometer std, m/s², at `imu_rate_hz`.
    pub accel_std: f64,
    pub imu_rate_hz: f64,
    /// Position random-walk density, m²/s.
    pub position_random_walk: f64,
    /// Orientation innovations above this angle, rad, are skipped.
    pub gate_rad: f64,
}

/// Updates that were rejected rather than applied.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AsvSkipCounts {
    pub gated: u32,
    pub gimbal_lock: u32,
    pub unobservable: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsvCamera {
    pub f_x: f64,
    pub f_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub width: f64,
    pub height: f64,
}

/// Camera height above the sea and the Earth radius, m.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsvHorizonGeometry {
    pub camera_height_v: f64,
    pub earth_radius_re: f64,
}

/// A detected line segment in pixels, image y pointing down.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AsvSegment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Roll and pitch reading, rad, with its stds.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AsvRollPitch {
    pub t: f64,
    pub phi: f64,
    pub theta: f64,
    pub sigma_phi: f64,
    pub sigma_theta: f64,
}

/// Opaque estimator handle.
pub struct AsvEstimator {
    inner: Estimator,
}

fn guard<F: FnOnce() -> Result<(), AsvStatus>>(f: F) -> AsvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AsvStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => AsvStatus::Panic,
    }
}

fn lift<T>(r: asv_inekf::Result<T>) -> Result<T, AsvStatus> {
    r.map_err(|e| AsvStatus::from(&e))
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, AsvStatus> {
    p.as_ref().ok_or(AsvStatus::NullPointer)
}

unsafe fn get_mut<'a, T>(p: *mut T) -> Result<&'a mut T, AsvStatus> {
    p.as_mut().ok_or(AsvStatus::NullPointer)
}

unsafe fn vec3(p: *const f64) -> Result<Vector3<f64>, AsvStatus> {
    if p.is_null() {
        return Err(AsvStatus::NullPointer);
    }
    Ok(Vector3::from_column_slice(std::slice::from_raw_parts(p, 3)))
}

fn pose_in(p: &AsvPose) -> Result<ExtendedPose, AsvStatus> {
    let r = lift(Rotation::from_matrix(Matrix3::from_row_slice(&p.r)))?;
    let x = ExtendedPose::new(r, Vector3::from(p.v), Vector3::from(p.p));
    if !x.is_finite() {
        return Err(AsvStatus::NonFinite);
    }
    Ok(x)
}

fn pose_out(x: &ExtendedPose) -> AsvPose {
    let m = x.r.matrix();
    let mut r = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            r[3 * i + j] = m[(i, j)];
        }
    }
    AsvPose { r, v: x.v.into(), p: x.p.into() }
}

fn params_in(p: &AsvParams) -> Result<EstimatorParams, AsvStatus> {
    let all = [p.gyro_std, p.accel_std, p.imu_rate_hz, p.position_random_walk, p.gate_rad];
    if all.iter().any(|x| !x.is_finite()) {
        return Err(AsvStatus::NonFinite);
    }
    if p.gyro_std < 0.0 || p.accel_std < 0.0 || p.imu_rate_hz <= 0.0 || p.position_random_walk < 0.0 || p.gate_rad <= 0.0 {
        return Err(AsvStatus::InvalidInput);
    }
    Ok(EstimatorParams {
        noise: ProcessNoise::from_sample_stds(p.gyro_std, p.accel_std, p.imu_rate_hz, p.position_random_walk),
        gate: p.gate_rad,
        ..EstimatorParams::default()
    })
}

fn set_applied(applied: *mut c_int, value: bool) {
    if let Some(a) = unsafe { applied.as_mut() } {
        *a = value as c_int;
    }
}

/// Static, NUL-terminated description of `status`.
#[no_mangle]
pub extern "C" fn asv_status_message(status: AsvStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        AsvStatus::Ok => b"ok\0",
        AsvStatus::NullPointer => b"null pointer argument\0",
        AsvStatus::InvalidInput => b"invalid input\0",
        AsvStatus::NonFinite => b"non-finite value\0",
        AsvStatus::BranchAmbiguity => b"rotation on the log branch cut\0",
        AsvStatus::GimbalLock => b"yaw undefined at +-90 deg pitch\0",
        AsvStatus::Unobservable => b"innovation covariance singular or ill-conditioned\0",
        AsvStatus::Gated => b"innovation exceeds the gate\0",
        AsvStatus::NoHorizon => b"no horizon segment survived filtering\0",
        AsvStatus::HorizonOutOfFrame => b"horizon outside the image\0",
        AsvStatus::DegenerateSegment => b"degenerate segment\0",
        AsvStatus::Internal => b"internal error\0",
        AsvStatus::Panic => b"panic inside the library\0",
    };
    s.as_ptr().cast()
}

/// Default tuning: gyro 0.002 rad/s and accel 0.04 m/s² per sample at 100 Hz,
/// position walk 1e-6 m²/s, 3 rad gate.
///
/// # Safety
/// `out` must be null or point to writable memory for one `AsvParams`.
#[no_mangle]
pub unsafe extern "C" fn asv_params_default(out: *mut AsvParams) -> AsvStatus {
    guard(|| {
        *get_mut(out)? =
            AsvParams { gyro_std: 0.002, accel_std: 0.04, imu_rate_hz: 100.0, position_random_walk: 1e-6, gate_rad: DEFAULT_GATE };
        Ok(())
    })
}

/// Initial covariance (81 doubles) for a belief at `x0` with isotropic rotation
/// std `sigma_rot` (rad) and per-axis velocity and position stds in the world frame.
///
/// # Safety
/// Pointers must be null or valid: `sigma_vel`/`sigma_pos` for 3 doubles, `out` for 81.
#[no_mangle]
pub unsafe extern "C" fn asv_initial_covariance(
    kind: AsvFilterKind,
    x0: *const AsvPose,
    sigma_rot: f64,
    sigma_vel: *const f64,
    sigma_pos: *const f64,
    out: *mut f64,
) -> AsvStatus {
    guard(|| {
        let x = pose_in(get(x0)?)?;
        let (sv, sp) = (vec3(sigma_vel)?, vec3(sigma_pos)?);
        if out.is_null() {
            return Err(AsvStatus::NullPointer);
        }
        if !(sigma_rot > 0.0) || sv.iter().chain(sp.iter()).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(AsvStatus::InvalidInput);
        }
        let cov = initial_covariance(kind.into(), &x.r, sigma_rot, sv, sp);
        write_matrix9(&cov, out);
        Ok(())
    })
}

unsafe fn write_matrix9(m: &Matrix9, out: *mut f64) {
    let dst = std::slice::from_raw_parts_mut(out, 81);
    for i in 0..9 {
        for j in 0..9 {
            dst[9 * i + j] = m[(i, j)];
        }
    }
}

/// Creates an estimator at time `t0` with belief `x0` and covariance `cov`
/// (81 doubles, row-major, symmetric positive definite, in the filter's own
/// error coordinates). `params` may be null for the defaults.
///
/// # Safety
/// `x0` must point to an `AsvPose`, `cov` to 81 doubles, `params` to an
/// `AsvParams` or be null, and `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_new(
    kind: AsvFilterKind,
    x0: *const AsvPose,
    cov: *const f64,
    t0: f64,
    params: *const AsvParams,
    out: *mut *mut AsvEstimator,
) -> AsvStatus {
    guard(|| {
        let out = get_mut(out)?;
        *out = std::ptr::null_mut();
        let x = pose_in(get(x0)?)?;
        if cov.is_null() {
            return Err(AsvStatus::NullPointer);
        }
        let sigma = Matrix9::from_row_slice(std::slice::from_raw_parts(cov, 81));
        if !t0.is_finite() || sigma.iter().any(|v| !v.is_finite()) {
            return Err(AsvStatus::NonFinite);
        }
        if (sigma - sigma.transpose()).norm() > 1e-9 * sigma.norm().max(1.0) || sigma.cholesky().is_none() {
            return Err(AsvStatus::InvalidInput);
        }
        let params = match params.as_ref() {
            Some(p) => params_in(p)?,
            None => EstimatorParams::default(),
        };
        let est = Estimator::new(kind.into(), x, sigma, t0, params);
        *out = Box::into_raw(Box::new(AsvEstimator { inner: est }));
        Ok(())
    })
}

/// Releases a handle from [`asv_estimator_new`]. Null is ignored.
///
/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_free(est: *mut AsvEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Propagates over `dt` seconds (0 < dt ≤ 0.1) with a body-frame gyro rate
/// (rad/s) and specific force (m/s²).
///
/// # Safety
/// `est` must be a live handle; `gyro` and `accel` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_predict(est: *mut AsvEstimator, gyro: *const f64, accel: *const f64, dt: f64) -> AsvStatus {
    guard(|| {
        let e = get_mut(est)?;
        let imu = ImuSample { t: e.inner.time(), gyro: vec3(gyro)?, accel: vec3(accel)? };
        lift(e.inner.predict(&imu, dt))
    })
}

/// Roll/pitch update with yaw left free. `applied` (nullable) receives 0 when the
/// update was skipped by the gate or as unobservable; that is not an error.
///
/// # Safety
/// `est` must be a live handle; `applied` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_update_roll_pitch(
    est: *mut AsvEstimator,
    reading: AsvRollPitch,
    applied: *mut c_int,
) -> AsvStatus {
    guard(|| {
        let e = get_mut(est)?;
        let r = RollPitchReading {
            phi: reading.phi,
            theta: reading.theta,
            sigma_phi: reading.sigma_phi,
            sigma_theta: reading.sigma_theta,
            t: reading.t,
        };
        set_applied(applied, lift(e.inner.update_roll_pitch(&r))?);
        Ok(())
    })
}

/// Heading update with roll and pitch left free. `psi` in rad, counterclockwise
/// from the world x axis.
///
/// # Safety
/// `est` must be a live handle; `applied` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_update_heading(
    est: *mut AsvEstimator,
    t: f64,
    psi: f64,
    sigma_psi: f64,
    applied: *mut c_int,
) -> AsvStatus {
    guard(|| {
        let e = get_mut(est)?;
        let h = HeadingReading { psi, sigma_psi, t };
        set_applied(applied, lift(e.inner.update_heading(&h))?);
        Ok(())
    })
}

/// Position fix in the world frame, m, with horizontal and vertical stds.
///
/// # Safety
/// `est` must be a live handle; `xyz` must point to 3 doubles; `applied` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_update_gps(
    est: *mut AsvEstimator,
    t: f64,
    xyz: *const f64,
    sigma_xy: f64,
    sigma_z: f64,
    applied: *mut c_int,
) -> AsvStatus {
    guard(|| {
        let e = get_mut(est)?;
        let g = GpsReading { xyz: vec3(xyz)?, sigma_xy, sigma_z, t };
        set_applied(applied, lift(e.inner.update_gps(&g))?);
        Ok(())
    })
}

/// Current pose and, if `t` is not null, its time.
///
/// # Safety
/// `est` must be a live handle; `out` must be writable; `t` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_get_state(est: *const AsvEstimator, out: *mut AsvPose, t: *mut f64) -> AsvStatus {
    guard(|| {
        let e = get(est)?;
        *get_mut(out)? = pose_out(&e.inner.pose());
        if let Some(t) = t.as_mut() {
            *t = e.inner.time();
        }
        Ok(())
    })
}

/// Current covariance, 81 doubles row-major, in the filter's own error coordinates.
///
/// # Safety
/// `est` must be a live handle; `out` must point to 81 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_get_covariance(est: *const AsvEstimator, out: *mut f64) -> AsvStatus {
    guard(|| {
        let e = get(est)?;
        if out.is_null() {
            return Err(AsvStatus::NullPointer);
        }
        write_matrix9(&e.inner.covariance(), out);
        Ok(())
    })
}

/// Counts of updates skipped so far.
///
/// # Safety
/// `est` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asv_estimator_skips(est: *const AsvEstimator, out: *mut AsvSkipCounts) -> AsvStatus {
    guard(|| {
        let s = get(est)?.inner.skips;
        *get_mut(out)? = AsvSkipCounts { gated: s.gated, gimbal_lock: s.gimbal_lock, unobservable: s.unobservable };
        Ok(())
    })
}

/// Roll and pitch from the best of `n` detected segments. Segments steeper than
/// `90° − vertical_cutoff_deg` are discarded; `mount_pitch` (rad) is the camera's
/// pitch relative to the body.
///
/// # Safety
/// `segments` must point to `n` segments (or be null when `n` is 0); `camera`,
/// `geometry` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asv_horizon_to_reading(
    segments: *const AsvSegment,
    n: usize,
    camera: *const AsvCamera,
    geometry: *const AsvHorizonGeometry,
    vertical_cutoff_deg: f64,
    mount_pitch: f64,
    sigma: f64,
    t: f64,
    out: *mut AsvRollPitch,
) -> AsvStatus {
    guard(|| {
        let segs: Vec<Segment> = if n == 0 {
            Vec::new()
        } else if segments.is_null() {
            return Err(AsvStatus::NullPointer);
        } else {
            std::slice::from_raw_parts(segments, n).iter().map(|s| Segment::new(s.x0, s.y0, s.x1, s.y1)).collect()
        };
        let c = get(camera)?;
        let cam = CameraIntrinsics { f_x: c.f_x, f_y: c.f_y, c_x: c.c_x, c_y: c.c_y, width: c.width, height: c.height };
        lift(cam.validate())?;
        let g = get(geometry)?;
        let geom = HorizonGeometry { camera_height_v: g.camera_height_v, earth_radius_re: g.earth_radius_re };
        lift(geom.validate())?;
        let opts = HorizonOptions { vertical_cutoff_deg, mount_pitch };
        let r = lift(horizon_to_reading(&segs, &cam, &geom, sigma, &opts, t))?;
        *get_mut(out)? = AsvRollPitch { t: r.t, phi: r.phi, theta: r.theta, sigma_phi: r.sigma_phi, sigma_theta: r.sigma_theta };
        Ok(())
    })
}
