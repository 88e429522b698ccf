//! Multiplicative EKF baseline.
//!
//! Orientation is a Hamilton unit quaternion `q` (body → world). The 9-dim error
//! state mirrors [`crate::liegroup::Tangent9`] ordering:
//! `[δθ (body, rad), δv (world, m/s), δp (world, m)]` with `q = q̂ ⊗ exp(δθ)`,
//! `v = v̂ + δv`, `p = p̂ + δp`.
//!
//! Unlike the invariant filter, the error dynamics here are linearized about the
//! current estimate: the velocity error couples to the attitude error through
//! `−R̂·a^`.
//!
//! Measurement models:
//! - roll/pitch: `[φ, θ]` of the Z-Y-X Euler decomposition of `q̂`.
//! - heading: the Z-Y-X yaw, as a scalar with wrapped residual.
//! - GPS: world position, linear.
//!
//! The covariance reset after injecting `δθ` is taken as identity.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};

use crate::inekf::{symmetrize, ImuSample, ProcessNoise, GRAVITY, MAX_DT};
use crate::liegroup::{hat3, Matrix9, Rotation};
use crate::measurements::{GpsReading, HeadingReading, RollPitchReading};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MekfState {
    pub q: UnitQuaternion<f64>,
    pub v: Vector3<f64>,
    pub p: Vector3<f64>,
    pub cov: Matrix9,
    pub t: f64,
}

impl MekfState {
    pub fn new(r: &Rotation, v: Vector3<f64>, p: Vector3<f64>, cov: Matrix9, t: f64) -> Self {
        let q = UnitQuaternion::from_matrix(r.matrix());
        MekfState { q, v, p, cov, t }
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::renormalized(&self.q.to_rotation_matrix().into_inner())
    }

    pub fn is_finite(&self) -> bool {
        self.q.coords.iter().chain(self.v.iter()).chain(self.p.iter()).all(|x| x.is_finite())
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI { w + 2.0 * PI } else { w }
}

fn quat_exp(dtheta: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*dtheta)
}

pub fn mekf_predict(state: &MekfState, imu: &ImuSample, dt: f64, q_noise: &ProcessNoise) -> Result<MekfState> {
    mekf_predict_with_gravity(state, imu, dt, q_noise, &GRAVITY)
}

pub fn mekf_predict_with_gravity(
    state: &MekfState,
    imu: &ImuSample,
    dt: f64,
    q_noise: &ProcessNoise,
    gravity: &Vector3<f64>,
) -> Result<MekfState> {
    if !imu.is_finite() {
        return Err(Error::NonFinite("IMU sample"));
    }
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidInput(format!("dt = {dt} outside (0, {MAX_DT}]")));
    }
    let r = state.q.to_rotation_matrix().into_inner();
    let acc_world = r * imu.accel + gravity;
    let q = UnitQuaternion::new_normalize((state.q * quat_exp(&(imu.gyro * dt))).into_inner());
    let v = state.v + acc_world * dt;
    let p = state.p + state.v * dt + acc_world * (0.5 * dt * dt);

    let mut f = Matrix9::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat3(&imu.gyro)));
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r * hat3(&imu.accel)));
    f.fixed_view_mut::<3, 3>(6, 3).copy_from(&Matrix3::identity());
    let phi = (f * dt).exp();

    let mut g = Matrix9::identity();
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    let qd = g * q_noise.q * g.transpose() * dt;
    let cov = phi * (state.cov + qd) * phi.transpose();
    Ok(MekfState { q, v, p, cov: symmetrize(&cov), t: state.t + dt })
}

fn kalman_update<const M: usize>(
    state: &MekfState,
    residual: &SVector<f64, M>,
    h: &SMatrix<f64, M, 9>,
    noise: &SMatrix<f64, M, M>,
) -> Result<MekfState> {
    let s = h * state.cov * h.transpose() + noise;
    let s_inv = s
        .try_inverse()
        .ok_or(Error::Unobservable { condition: f64::INFINITY })?;
    let k = state.cov * h.transpose() * s_inv;
    let dx = k * residual;
    let dtheta: Vector3<f64> = dx.fixed_rows::<3>(0).into();
    let q = UnitQuaternion::new_normalize((state.q * quat_exp(&dtheta)).into_inner());
    let v = state.v + dx.fixed_rows::<3>(3);
    let p = state.p + dx.fixed_rows::<3>(6);
    let cov = (Matrix9::identity() - k * h) * state.cov;
    Ok(MekfState { q, v, p, cov: symmetrize(&cov), t: state.t })
}

/// Roll and pitch of `q̂` with their Jacobian with respect to `δθ`.
fn roll_pitch_model(state: &MekfState) -> Result<(SVector<f64, 2>, SMatrix<f64, 2, 9>)> {
    let r = state.q.to_rotation_matrix().into_inner();
    let row2 = Vector3::new(r[(2, 0)], r[(2, 1)], r[(2, 2)]);
    let cos_pitch = row2.y.hypot(row2.z);
    if cos_pitch < 1e-6 {
        return Err(Error::GimbalLock);
    }
    let roll = row2.y.atan2(row2.z);
    let pitch = (-row2.x).atan2(cos_pitch);
    // d(row 2 of R̂·exp(δθ)) = row2^ δθ
    let d_row2 = hat3(&row2);
    let mut h = SMatrix::<f64, 2, 9>::zeros();
    for j in 0..3 {
        let (d20, d21, d22) = (d_row2[(0, j)], d_row2[(1, j)], d_row2[(2, j)]);
        h[(0, j)] = (row2.z * d21 - row2.y * d22) / (cos_pitch * cos_pitch);
        h[(1, j)] = -d20 / cos_pitch;
    }
    Ok((SVector::<f64, 2>::new(roll, pitch), h))
}

fn heading_model(state: &MekfState) -> Result<(f64, SMatrix<f64, 1, 9>)> {
    let r = state.q.to_rotation_matrix().into_inner();
    let (r00, r10) = (r[(0, 0)], r[(1, 0)]);
    let n2 = r00 * r00 + r10 * r10;
    if n2 < 1e-12 {
        return Err(Error::GimbalLock);
    }
    // d(column 0 of R̂·exp(δθ)) = −R̂·e0^ δθ
    let d_col0 = -r * hat3(&Vector3::x());
    let mut h = SMatrix::<f64, 1, 9>::zeros();
    for j in 0..3 {
        h[(0, j)] = (r00 * d_col0[(1, j)] - r10 * d_col0[(0, j)]) / n2;
    }
    Ok((r10.atan2(r00), h))
}

pub fn mekf_update_rollpitch(state: &MekfState, reading: &RollPitchReading) -> Result<MekfState> {
    reading.validate()?;
    let (pred, h) = roll_pitch_model(state)?;
    let residual = SVector::<f64, 2>::new(
        wrap_angle(reading.phi - pred[0]),
        wrap_angle(reading.theta - pred[1]),
    );
    let noise = SMatrix::<f64, 2, 2>::from_diagonal(&SVector::<f64, 2>::new(
        reading.sigma_phi.powi(2),
        reading.sigma_theta.powi(2),
    ));
    kalman_update(state, &residual, &h, &noise)
}

pub fn mekf_update_heading(state: &MekfState, reading: &HeadingReading) -> Result<MekfState> {
    reading.validate()?;
    let (pred, h) = heading_model(state)?;
    let residual = SVector::<f64, 1>::new(wrap_angle(reading.psi - pred));
    let noise = SMatrix::<f64, 1, 1>::new(reading.sigma_psi.powi(2));
    kalman_update(state, &residual, &h, &noise)
}

/// Roll, pitch and heading applied as one three-angle update.
pub fn mekf_update_full(state: &MekfState, rp: &RollPitchReading, heading: &HeadingReading) -> Result<MekfState> {
    rp.validate()?;
    heading.validate()?;
    let (rp_pred, h_rp) = roll_pitch_model(state)?;
    let (yaw_pred, h_yaw) = heading_model(state)?;
    let mut h = SMatrix::<f64, 3, 9>::zeros();
    h.fixed_rows_mut::<2>(0).copy_from(&h_rp);
    h.fixed_rows_mut::<1>(2).copy_from(&h_yaw);
    let residual = Vector3::new(
        wrap_angle(rp.phi - rp_pred[0]),
        wrap_angle(rp.theta - rp_pred[1]),
        wrap_angle(heading.psi - yaw_pred),
    );
    let noise = Matrix3::from_diagonal(&Vector3::new(
        rp.sigma_phi.powi(2),
        rp.sigma_theta.powi(2),
        heading.sigma_psi.powi(2),
    ));
    kalman_update(state, &residual, &h, &noise)
}

pub fn mekf_update_gps(state: &MekfState, reading: &GpsReading) -> Result<MekfState> {
    reading.validate()?;
    let mut h = SMatrix::<f64, 3, 9>::zeros();
    h.fixed_view_mut::<3, 3>(0, 6).copy_from(&Matrix3::identity());
    let (xy, z) = (reading.sigma_xy.powi(2), reading.sigma_z.powi(2));
    let noise = Matrix3::from_diagonal(&Vector3::new(xy, xy, z));
    kalman_update(state, &(reading.xyz - state.p), &h, &noise)
}
