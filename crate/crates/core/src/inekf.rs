//! Left-invariant EKF on SE₂(3).
//!
//! The tracked error is `η = X⁻¹X̂ = exp(ξ^)`, so the truth is recovered as
//! `X = X̂·exp(−ξ^)`. Corrections are applied on the right:
//! `X̂⁺ = X̂·exp(−(K·V)^)`.
//!
//! With IMU inputs the linearized error dynamics
//!
//! ```text
//! d/dt ξ_R = −ω^ ξ_R                + n_g
//! d/dt ξ_v = −a^ ξ_R − ω^ ξ_v       + n_a
//! d/dt ξ_p =           ξ_v − ω^ ξ_p
//! ```
//!
//! depend only on the measured rates, never on the state estimate.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::liegroup::{
    hat3, se23_exp, so3_exp, so3_log, ExtendedPose, Matrix9, Rotation, Tangent3, Tangent9,
};
use crate::{Error, Result};

pub type Matrix3x9 = SMatrix<f64, 3, 9>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;

/// Standard gravity in the z-up world frame, m/s².
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);
/// Longest propagation step accepted by [`predict`], s.
pub const MAX_DT: f64 = 0.1;
/// Default rejection threshold on the innovation rotation angle, rad.
pub const DEFAULT_GATE: f64 = 3.0;
/// Condition number above which the innovation block is treated as singular.
const MAX_CONDITION: f64 = 1e12;

/// Body-frame gyro (rad/s) and specific force (m/s²) at time `t` (s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

/// Estimate `X̂` with the covariance of the left-invariant error `ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub x_hat: ExtendedPose,
    pub sigma_hat: Matrix9,
    pub t: f64,
}

impl FilterState {
    pub fn new(x_hat: ExtendedPose, sigma_hat: Matrix9, t: f64) -> Self {
        FilterState { x_hat, sigma_hat, t }
    }

    /// Left-invariant error `log(X⁻¹X̂)` of this estimate against `truth`.
    pub fn error_against(&self, truth: &ExtendedPose) -> Result<Tangent9> {
        crate::liegroup::se23_log(&truth.inverse().compose(&self.x_hat))
    }
}

/// Continuous-time noise density on the `[gyro, accel, position]` blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessNoise {
    pub q: Matrix9,
}

impl ProcessNoise {
    /// Isotropic densities in rad²/s, (m/s²)²·s and m²/s.
    pub fn from_densities(gyro: f64, accel: f64, position: f64) -> Self {
        let mut q = Matrix9::zeros();
        for i in 0..3 {
            q[(i, i)] = gyro;
            q[(3 + i, 3 + i)] = accel;
            q[(6 + i, 6 + i)] = position;
        }
        ProcessNoise { q }
    }

    /// Densities from discrete per-sample standard deviations at `rate_hz`.
    pub fn from_sample_stds(gyro_std: f64, accel_std: f64, rate_hz: f64, position: f64) -> Self {
        Self::from_densities(gyro_std.powi(2) / rate_hz, accel_std.powi(2) / rate_hz, position)
    }
}

impl Default for ProcessNoise {
    /// Gyro 0.002 rad/s and accel 0.04 m/s² per sample at 100 Hz.
    fn default() -> Self {
        Self::from_sample_stds(0.002, 0.04, 100.0, 1e-6)
    }
}

/// An SO(3) measurement `z` with per-axis variances; masked axes have infinite variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationMeasurement {
    pub z: Rotation,
    variances: Vector3<f64>,
    inf_mask: [bool; 3],
}

impl OrientationMeasurement {
    /// `variances` entries on masked axes are ignored.
    pub fn new(z: Rotation, variances: Vector3<f64>, inf_mask: [bool; 3]) -> Result<Self> {
        if inf_mask.iter().all(|&m| m) {
            return Err(Error::InvalidInput("all measurement axes masked".into()));
        }
        let mut stored = Vector3::zeros();
        for i in 0..3 {
            if inf_mask[i] {
                continue;
            }
            if !(variances[i].is_finite() && variances[i] > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "measurement variance {} on axis {i} must be finite and positive",
                    variances[i]
                )));
            }
            stored[i] = variances[i];
        }
        Ok(OrientationMeasurement { z, variances: stored, inf_mask })
    }

    pub fn inf_mask(&self) -> [bool; 3] {
        self.inf_mask
    }

    /// Variance of axis `i`, or `None` when it is masked.
    pub fn variance(&self, i: usize) -> Option<f64> {
        (!self.inf_mask[i]).then_some(self.variances[i])
    }

    /// `M⁺`: reciprocal variances with masked axes set to zero.
    pub fn information(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from_fn(|i, _| {
            self.variance(i).map_or(0.0, |var| 1.0 / var)
        }))
    }
}

/// Innovation `V = log(z⁻¹ẑ)^∨` with the inverse innovation covariance and gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Innovation {
    pub v_l: Tangent3,
    pub s_inv: Matrix3<f64>,
    pub k: Matrix9x3,
}

/// Jacobian `[I₃ 0₃ₓ₆]` of the rotation homomorphism.
pub fn rotation_jacobian() -> Matrix3x9 {
    let mut h = Matrix3x9::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    h
}

/// Jacobian `[0₃ₓ₆ I₃]` of a position observation.
pub fn position_jacobian() -> Matrix3x9 {
    let mut h = Matrix3x9::zeros();
    h.fixed_view_mut::<3, 3>(0, 6).copy_from(&Matrix3::identity());
    h
}

/// Error transition `Φ = exp(A·dt)` for one IMU step. Depends on the IMU only.
pub fn error_transition(imu: &ImuSample, dt: f64) -> Matrix9 {
    let w = -hat3(&imu.gyro);
    let mut a = Matrix9::zeros();
    for k in 0..3 {
        a.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&w);
    }
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-hat3(&imu.accel)));
    a.fixed_view_mut::<3, 3>(6, 3).copy_from(&Matrix3::identity());
    (a * dt).exp()
}

pub(crate) fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Propagates with standard gravity.
pub fn predict(state: &FilterState, imu: &ImuSample, dt: f64, q: &ProcessNoise) -> Result<FilterState> {
    predict_with_gravity(state, imu, dt, q, &GRAVITY)
}

pub fn predict_with_gravity(
    state: &FilterState,
    imu: &ImuSample,
    dt: f64,
    q: &ProcessNoise,
    gravity: &Vector3<f64>,
) -> Result<FilterState> {
    if !imu.is_finite() {
        return Err(Error::NonFinite("IMU sample"));
    }
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidInput(format!("dt = {dt} outside (0, {MAX_DT}]")));
    }
    let x = &state.x_hat;
    let acc_world = x.r.rotate(&imu.accel) + gravity;
    let r = Rotation::from_matrix_unchecked(x.r.matrix() * so3_exp(&(imu.gyro * dt)).matrix());
    let v = x.v + acc_world * dt;
    let p = x.p + x.v * dt + acc_world * (0.5 * dt * dt);

    let phi = error_transition(imu, dt);
    let sigma = phi * (state.sigma_hat + q.q * dt) * phi.transpose();
    Ok(FilterState::new(ExtendedPose::new(r, v, p), symmetrize(&sigma), state.t + dt))
}

fn condition_number(m: &Matrix3<f64>) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `S⁻¹ = lim (Σ̃ + R̂ᵀMR̂)⁻¹` with the masked variances of `M` taken to +∞.
///
/// Evaluated as `Σ̃⁻¹ − Σ̃⁻¹(Σ̃·R̂ᵀM⁺R̂ + I)⁻¹`, which never forms a large number.
pub fn s_inverse_with_infinite(
    sigma_tilde: &Matrix3<f64>,
    meas: &OrientationMeasurement,
    r_hat: &Rotation,
) -> Result<Matrix3<f64>> {
    let condition = condition_number(&symmetrize(sigma_tilde));
    if condition > MAX_CONDITION {
        return Err(Error::Unobservable { condition });
    }
    let unobservable = || Error::Unobservable { condition };
    let st_inv = sigma_tilde.try_inverse().ok_or_else(unobservable)?;
    let r = r_hat.matrix();
    let info = r.transpose() * meas.information() * r;
    let inner = (sigma_tilde * info + Matrix3::identity())
        .try_inverse()
        .ok_or_else(unobservable)?;
    Ok(symmetrize(&(st_inv - st_inv * inner)))
}

pub fn innovation(
    state: &FilterState,
    meas: &OrientationMeasurement,
    z_hat: &Rotation,
    h_jac: &Matrix3x9,
    gate: f64,
) -> Result<Innovation> {
    let v_l = so3_log(&(&meas.z.inverse() * z_hat))?;
    let angle = v_l.norm();
    if angle > gate {
        return Err(Error::Gated { angle, gate });
    }
    let sigma_tilde = h_jac * state.sigma_hat * h_jac.transpose();
    let s_inv = s_inverse_with_infinite(&sigma_tilde, meas, &state.x_hat.r)?;
    let k = state.sigma_hat * h_jac.transpose() * s_inv;
    Ok(Innovation { v_l, s_inv, k })
}

fn correct(state: &FilterState, k: &Matrix9x3, residual: &Vector3<f64>, h_jac: &Matrix3x9) -> FilterState {
    let dx = Tangent9(-(k * residual));
    let x_hat = state.x_hat.compose(&se23_exp(&dx));
    let sigma = (Matrix9::identity() - k * h_jac) * state.sigma_hat;
    FilterState::new(x_hat, symmetrize(&sigma), state.t)
}

/// Orientation update with the default innovation gate.
pub fn update_orientation(
    state: &FilterState,
    meas: &OrientationMeasurement,
    z_hat: &Rotation,
    h_jac: &Matrix3x9,
) -> Result<FilterState> {
    update_orientation_gated(state, meas, z_hat, h_jac, DEFAULT_GATE)
}

pub fn update_orientation_gated(
    state: &FilterState,
    meas: &OrientationMeasurement,
    z_hat: &Rotation,
    h_jac: &Matrix3x9,
    gate: f64,
) -> Result<FilterState> {
    let inn = innovation(state, meas, z_hat, h_jac, gate)?;
    Ok(correct(state, &inn.k, &inn.v_l, h_jac))
}

/// World-frame position fix `y` with covariance `m_pos`, as a body-frame pseudo-measurement.
pub fn update_position(state: &FilterState, y: &Vector3<f64>, m_pos: &Matrix3<f64>) -> Result<FilterState> {
    if !y.iter().chain(m_pos.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("position measurement"));
    }
    let rt = state.x_hat.r.matrix().transpose();
    let residual = rt * (state.x_hat.p - y);
    let h = position_jacobian();
    let s = h * state.sigma_hat * h.transpose() + rt * m_pos * rt.transpose();
    let condition = condition_number(&symmetrize(&s));
    let s_inv = s
        .try_inverse()
        .filter(|_| condition <= MAX_CONDITION)
        .ok_or(Error::Unobservable { condition })?;
    let k = state.sigma_hat * h.transpose() * s_inv;
    Ok(correct(state, &k, &residual, &h))
}
