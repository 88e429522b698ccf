//! Builders that turn sensor readings into the measurement forms consumed by
//! [`crate::inekf`].
//!
//! Partial readings are expressed in the planar frame `rot_z(yaw)`: a roll/pitch
//! reading is compared with the yaw-stripped belief and its yaw axis is given
//! infinite variance; a heading reading is compared with the yaw-only part of the
//! belief and its roll and pitch axes are given infinite variance.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::inekf::{self, FilterState, OrientationMeasurement};
use crate::liegroup::{homomorphism_h, roll_pitch_projection, rot_x, rot_y, rot_z, yaw_of, ExtendedPose, Rotation};
use crate::{Error, Result};

/// Default window for pairing a roll/pitch reading with a heading reading, s.
pub const PAIRING_WINDOW: f64 = 0.5;

/// Roll `phi` and pitch `theta` (rad) with their standard deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RollPitchReading {
    pub phi: f64,
    pub theta: f64,
    pub sigma_phi: f64,
    pub sigma_theta: f64,
    pub t: f64,
}

impl RollPitchReading {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.phi, self.theta, self.sigma_phi, self.sigma_theta, self.t];
        if !finite.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("roll/pitch reading"));
        }
        if self.phi.abs() >= FRAC_PI_2 || self.theta.abs() >= FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "roll {} / pitch {} outside the semi-planar regime",
                self.phi, self.theta
            )));
        }
        if self.sigma_phi <= 0.0 || self.sigma_theta <= 0.0 {
            return Err(Error::InvalidInput("roll/pitch std must be positive".into()));
        }
        Ok(())
    }
}

/// Absolute heading `psi` (rad, world z-axis) with standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadingReading {
    pub psi: f64,
    pub sigma_psi: f64,
    pub t: f64,
}

impl HeadingReading {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi.is_finite() && self.sigma_psi.is_finite() && self.t.is_finite()) {
            return Err(Error::NonFinite("heading reading"));
        }
        if self.psi <= -PI || self.psi > PI {
            return Err(Error::InvalidInput(format!("heading {} outside (-π, π]", self.psi)));
        }
        if self.sigma_psi <= 0.0 {
            return Err(Error::InvalidInput("heading std must be positive".into()));
        }
        Ok(())
    }
}

/// World-frame position fix (m) with horizontal and vertical standard deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsReading {
    pub xyz: Vector3<f64>,
    pub sigma_xy: f64,
    pub sigma_z: f64,
    pub t: f64,
}

impl GpsReading {
    pub fn validate(&self) -> Result<()> {
        if !self.xyz.iter().chain([self.sigma_xy, self.sigma_z, self.t].iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("GPS reading"));
        }
        if self.sigma_xy <= 0.0 || self.sigma_z <= 0.0 {
            return Err(Error::InvalidInput("GPS std must be positive".into()));
        }
        Ok(())
    }
}

/// How the predicted measurement `ẑ` is formed from the belief.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZHatRule {
    /// `ẑ = h(X̂)`, the full rotation.
    Homomorphism,
    /// `ẑ = P(R̂)`, the rotation with yaw removed.
    RollPitchProjection,
    /// `ẑ = rot_z(yaw_of(R̂))`.
    Heading,
}

impl ZHatRule {
    pub fn predict(&self, x: &ExtendedPose) -> Result<Rotation> {
        let r = homomorphism_h(x);
        match self {
            ZHatRule::Homomorphism => Ok(r),
            ZHatRule::RollPitchProjection => roll_pitch_projection(&r),
            ZHatRule::Heading => Ok(rot_z(yaw_of(&r)?)),
        }
    }
}

/// A position fix ready for [`inekf::update_position`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionMeasurement {
    pub y: Vector3<f64>,
    pub m_pos: Matrix3<f64>,
}

pub fn make_full_orientation(r_meas: Rotation, m: &Matrix3<f64>) -> Result<(OrientationMeasurement, ZHatRule)> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("orientation covariance"));
    }
    let meas = OrientationMeasurement::new(r_meas, m.diagonal(), [false; 3])?;
    Ok((meas, ZHatRule::Homomorphism))
}

pub fn make_roll_pitch(reading: &RollPitchReading) -> Result<(OrientationMeasurement, ZHatRule)> {
    reading.validate()?;
    let z = rot_y(reading.theta) * rot_x(reading.phi);
    let var = Vector3::new(reading.sigma_phi.powi(2), reading.sigma_theta.powi(2), 0.0);
    let meas = OrientationMeasurement::new(z, var, [false, false, true])?;
    Ok((meas, ZHatRule::RollPitchProjection))
}

pub fn make_heading(reading: &HeadingReading) -> Result<(OrientationMeasurement, ZHatRule)> {
    reading.validate()?;
    let var = Vector3::new(0.0, 0.0, reading.sigma_psi.powi(2));
    let meas = OrientationMeasurement::new(rot_z(reading.psi), var, [true, true, false])?;
    Ok((meas, ZHatRule::Heading))
}

pub fn make_gps(reading: &GpsReading) -> Result<PositionMeasurement> {
    reading.validate()?;
    let (xy, z) = (reading.sigma_xy.powi(2), reading.sigma_z.powi(2));
    Ok(PositionMeasurement { y: reading.xyz, m_pos: Matrix3::from_diagonal(&Vector3::new(xy, xy, z)) })
}

/// Full orientation `rot_z(ψ)·rot_y(θ)·rot_x(φ)` rebuilt from a heading and a roll/pitch reading.
pub fn make_reconstructed(
    heading: &HeadingReading,
    rp: &RollPitchReading,
) -> Result<(OrientationMeasurement, ZHatRule)> {
    heading.validate()?;
    rp.validate()?;
    let r = rot_z(heading.psi) * rot_y(rp.theta) * rot_x(rp.phi);
    let m = Matrix3::from_diagonal(&Vector3::new(
        rp.sigma_phi.powi(2),
        rp.sigma_theta.powi(2),
        heading.sigma_psi.powi(2),
    ));
    make_full_orientation(r, &m)
}

/// The roll/pitch reading closest in time to `t`, if one lies within `window` seconds.
/// Ties go to the earlier reading.
pub fn nearest_in_time(readings: &[RollPitchReading], t: f64, window: f64) -> Option<&RollPitchReading> {
    readings
        .iter()
        .filter(|r| (r.t - t).abs() <= window)
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}

/// Innovation `V = log(z⁻¹ ẑ)` for a measurement against a belief.
pub fn innovation_of(meas: &OrientationMeasurement, rule: ZHatRule, x: &ExtendedPose) -> Result<Vector3<f64>> {
    let z_hat = rule.predict(x)?;
    crate::liegroup::so3_log(&(meas.z.inverse() * z_hat))
}

/// Applies an orientation measurement with the rotation Jacobian `[I₃ 0₃ₓ₆]`.
pub fn apply_orientation(
    state: &FilterState,
    meas: &OrientationMeasurement,
    rule: ZHatRule,
    gate: f64,
) -> Result<FilterState> {
    let z_hat = rule.predict(&state.x_hat)?;
    inekf::update_orientation_gated(state, meas, &z_hat, &inekf::rotation_jacobian(), gate)
}

pub fn apply_position(state: &FilterState, meas: &PositionMeasurement) -> Result<FilterState> {
    inekf::update_position(state, &meas.y, &meas.m_pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inekf::DEFAULT_GATE;
    use crate::liegroup::{se23_exp, so3_exp, Matrix9, Tangent9, Vector9};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(r: Rotation) -> ExtendedPose {
        ExtendedPose::new(r, Vector3::zeros(), Vector3::zeros())
    }

    fn rp(phi: f64, theta: f64) -> RollPitchReading {
        RollPitchReading { phi, theta, sigma_phi: 0.02, sigma_theta: 0.02, t: 0.0 }
    }

    #[test]
    fn full_orientation_passthrough() {
        let r = rot_z(0.3) * rot_x(0.1);
        let deg2 = 1f64.to_radians().powi(2);
        let m = Matrix3::identity() * deg2;
        let (meas, rule) = make_full_orientation(r, &m).unwrap();
        assert_eq!(rule, ZHatRule::Homomorphism);
        assert_eq!(meas.inf_mask(), [false; 3]);
        assert_eq!(meas.variance(0), Some(deg2));
        assert_eq!(innovation_of(&meas, rule, &pose(r)).unwrap(), Vector3::zeros());
    }

    #[test]
    fn reconstruction_composes_zyx() {
        let h = HeadingReading { psi: 0.5, sigma_psi: 0.01, t: 1.0 };
        let r = rp(0.1, -0.05);
        let (meas, _) = make_reconstructed(&h, &r).unwrap();
        let expected = rot_z(0.5) * rot_y(-0.05) * rot_x(0.1);
        assert_relative_eq!(*meas.z.matrix(), *expected.matrix(), epsilon = 1e-15);
        assert_eq!(meas.variance(2), Some(1e-4));
    }

    #[test]
    fn pairing_picks_nearest_within_window() {
        let readings: Vec<_> = [0.9, 0.97, 1.2, 2.0]
            .iter()
            .map(|&t| RollPitchReading { t, ..rp(0.0, 0.0) })
            .collect();
        assert_eq!(nearest_in_time(&readings, 1.0, PAIRING_WINDOW).unwrap().t, 0.97);
        assert_eq!(nearest_in_time(&readings, 1.6, PAIRING_WINDOW).unwrap().t, 2.0);
        assert!(nearest_in_time(&readings, 3.0, PAIRING_WINDOW).is_none());
    }

    #[test]
    fn roll_pitch_measurement_shape() {
        let (meas, rule) = make_roll_pitch(&rp(0.0, 0.0)).unwrap();
        assert_eq!(meas.z, Rotation::identity());
        assert_eq!(meas.inf_mask(), [false, false, true]);
        assert_eq!(rule, ZHatRule::RollPitchProjection);
        assert!(make_roll_pitch(&rp(1.6, 0.0)).is_err());
        assert!(make_roll_pitch(&RollPitchReading { sigma_phi: 0.0, ..rp(0.0, 0.0) }).is_err());
    }

    #[test]
    fn noiseless_roll_pitch_has_zero_innovation_for_any_yaw() {
        let (meas, rule) = make_roll_pitch(&rp(0.05, 0.1)).unwrap();
        for psi in [-3.0, -1.0, 0.0, 0.4, 2.9] {
            let truth = rot_z(psi) * rot_y(0.1) * rot_x(0.05);
            let v = innovation_of(&meas, rule, &pose(truth)).unwrap();
            assert!(v.norm() < 1e-12, "psi {psi}: {v}");
        }
    }

    #[test]
    fn heading_measurement_cases() {
        let r = rot_z(0.8) * rot_y(0.05);
        let psi = yaw_of(&r).unwrap();
        let (meas, rule) = make_heading(&HeadingReading { psi, sigma_psi: 0.02, t: 0.0 }).unwrap();
        assert_eq!(meas.inf_mask(), [true, true, false]);
        assert!(innovation_of(&meas, rule, &pose(r)).unwrap().norm() < 1e-15);

        // belief yaw off by 0.2 rad
        let belief = rot_z(psi + 0.2) * rot_y(0.05);
        let v = innovation_of(&meas, rule, &pose(belief)).unwrap();
        assert_eq!(v.x, 0.0);
        assert_eq!(v.y, 0.0);
        assert_relative_eq!(v.z, 0.2, epsilon = 1e-12);

        assert!(make_heading(&HeadingReading { psi: -PI, sigma_psi: 0.1, t: 0.0 }).is_err());
    }

    #[test]
    fn heading_update_leaves_tilt_of_level_belief() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let psi_hat = rng.random_range(-3.0..3.0);
            let sigma = Matrix9::from_diagonal(&Vector9::from_fn(|_, _| rng.random_range(0.001..0.5)));
            let state = FilterState::new(pose(rot_z(psi_hat)), sigma, 0.0);
            let psi = (psi_hat + rng.random_range(-0.5..0.5)).clamp(-3.1, 3.1);
            let (meas, rule) = make_heading(&HeadingReading { psi, sigma_psi: 0.02, t: 0.0 }).unwrap();
            let next = apply_orientation(&state, &meas, rule, DEFAULT_GATE).unwrap();
            let before = roll_pitch_projection(&state.x_hat.r).unwrap();
            let after = roll_pitch_projection(&next.x_hat.r).unwrap();
            assert!(before.angle_to(&after) < 1e-9);
        }
    }

    #[test]
    fn gps_defaults_and_zero_innovation() {
        let reading = GpsReading { xyz: Vector3::new(1.0, 2.0, 3.0), sigma_xy: 1.75, sigma_z: 5.0, t: 0.0 };
        let m = make_gps(&reading).unwrap();
        assert_eq!(m.m_pos.diagonal(), Vector3::new(1.75 * 1.75, 1.75 * 1.75, 25.0));
        let mut x = pose(rot_z(1.0));
        x.p = reading.xyz;
        let state = FilterState::new(x, Matrix9::identity(), 0.0);
        assert_eq!(apply_position(&state, &m).unwrap().x_hat, x);
    }

    #[test]
    fn repeated_gps_fixes_shrink_position_covariance() {
        let reading = GpsReading { xyz: Vector3::zeros(), sigma_xy: 1.75, sigma_z: 5.0, t: 0.0 };
        let m = make_gps(&reading).unwrap();
        let mut state = FilterState::new(pose(rot_z(0.3)), Matrix9::identity() * 16.0, 0.0);
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            state = apply_position(&state, &m).unwrap();
            let tr = state.sigma_hat.fixed_view::<3, 3>(6, 6).trace();
            assert!(tr < last);
            last = tr;
        }
    }

    fn random_tilted_truth(rng: &mut ChaCha8Rng) -> Rotation {
        rot_z(rng.random_range(-3.0..3.0)) * rot_y(rng.random_range(-0.09..0.09)) * rot_x(rng.random_range(-0.09..0.09))
    }

    fn random_error(rng: &mut ChaCha8Rng, scale: f64) -> Tangent9 {
        Tangent9::from_parts(
            &Vector3::from_fn(|_, _| rng.random_range(-scale..scale)),
            &Vector3::zeros(),
            &Vector3::zeros(),
        )
    }

    #[test]
    fn noiseless_innovation_bounded_by_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let truth_r = random_tilted_truth(&mut rng);
            let xi = random_error(&mut rng, 0.1);
            let belief = pose(truth_r).compose(&se23_exp(&xi));
            let (_, _, yaw) = truth_r.roll_pitch_yaw();
            let cases = [
                make_heading(&HeadingReading { psi: yaw, sigma_psi: 0.01, t: 0.0 }).unwrap(),
                make_full_orientation(truth_r, &Matrix3::identity()).unwrap(),
            ];
            for (meas, rule) in cases {
                let v = innovation_of(&meas, rule, &belief).unwrap();
                assert!(v.norm() <= xi.0.norm() + 1e-12, "{rule:?}: {} > {}", v.norm(), xi.0.norm());
            }
        }
    }

    // The yaw-free projection only bounds the innovation to first order: the
    // excess over ‖ξ‖ must shrink quadratically with the error.
    #[test]
    fn roll_pitch_innovation_excess_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let truth_r = random_tilted_truth(&mut rng);
            let xi = random_error(&mut rng, 0.1);
            let (roll, pitch, _) = truth_r.roll_pitch_yaw();
            let (meas, rule) = make_roll_pitch(&rp(roll, pitch)).unwrap();
            let excess = |s: f64| {
                let xi_s = Tangent9(xi.0 * s);
                let v = innovation_of(&meas, rule, &pose(truth_r).compose(&se23_exp(&xi_s))).unwrap();
                (v.norm() - xi_s.0.norm()).max(0.0)
            };
            let n = xi.0.norm();
            assert!(excess(1.0) <= n * n, "{} > {}", excess(1.0), n * n);
            assert!(excess(0.1) <= 0.01 * n * n + 1e-12);
        }
    }

    #[test]
    fn constructed_measurements_are_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let (a, b, c) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-3.1..3.1));
            let (m1, _) = make_roll_pitch(&rp(a, b)).unwrap();
            let (m2, _) = make_heading(&HeadingReading { psi: c, sigma_psi: 0.1, t: 0.0 }).unwrap();
            for z in [m1.z, m2.z, so3_exp(&Vector3::new(a, b, c))] {
                assert!(Rotation::from_matrix(*z.matrix()).is_ok());
            }
        }
    }
}
