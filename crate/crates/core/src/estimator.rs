//! One interface over the invariant filter and the MEKF baseline, so the
//! simulator and replay can drive either with the same event stream.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::inekf::{self, FilterState, ImuSample, ProcessNoise, GRAVITY};
use crate::liegroup::{so3_log, ExtendedPose, Matrix9, Rotation, Tangent9};
use crate::measurements::{self, GpsReading, HeadingReading, RollPitchReading};
use crate::mekf::{self, MekfState};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Inekf,
    Mekf,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Inekf => "inekf",
            FilterKind::Mekf => "mekf",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inekf" => Ok(FilterKind::Inekf),
            "mekf" => Ok(FilterKind::Mekf),
            _ => Err(Error::InvalidInput(format!("unknown filter '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorParams {
    pub noise: ProcessNoise,
    pub gravity: Vector3<f64>,
    pub gate: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams { noise: ProcessNoise::default(), gravity: GRAVITY, gate: inekf::DEFAULT_GATE }
    }
}

/// Updates that were rejected rather than applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipCounts {
    pub gated: u32,
    pub gimbal_lock: u32,
    pub unobservable: u32,
}

impl SkipCounts {
    pub fn total(&self) -> u32 {
        self.gated + self.gimbal_lock + self.unobservable
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Belief {
    Inekf(FilterState),
    Mekf(MekfState),
}

#[derive(Clone, Copy, Debug)]
pub struct Estimator {
    belief: Belief,
    params: EstimatorParams,
    pub skips: SkipCounts,
}

impl Estimator {
    /// `cov` is in the filter's own error coordinates.
    pub fn new(kind: FilterKind, x0: ExtendedPose, cov: Matrix9, t0: f64, params: EstimatorParams) -> Self {
        let belief = match kind {
            FilterKind::Inekf => Belief::Inekf(FilterState::new(x0, cov, t0)),
            FilterKind::Mekf => Belief::Mekf(MekfState::new(&x0.r, x0.v, x0.p, cov, t0)),
        };
        Estimator { belief, params, skips: SkipCounts::default() }
    }

    pub fn kind(&self) -> FilterKind {
        match self.belief {
            Belief::Inekf(_) => FilterKind::Inekf,
            Belief::Mekf(_) => FilterKind::Mekf,
        }
    }

    pub fn time(&self) -> f64 {
        match &self.belief {
            Belief::Inekf(s) => s.t,
            Belief::Mekf(s) => s.t,
        }
    }

    pub fn pose(&self) -> ExtendedPose {
        match &self.belief {
            Belief::Inekf(s) => s.x_hat,
            Belief::Mekf(s) => ExtendedPose::new(s.rotation(), s.v, s.p),
        }
    }

    pub fn covariance(&self) -> Matrix9 {
        match &self.belief {
            Belief::Inekf(s) => s.sigma_hat,
            Belief::Mekf(s) => s.cov,
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.belief {
            Belief::Inekf(s) => s.x_hat.is_finite() && s.sigma_hat.iter().all(|x| x.is_finite()),
            Belief::Mekf(s) => s.is_finite() && s.cov.iter().all(|x| x.is_finite()),
        }
    }

    /// Estimation error in the filter's own error coordinates.
    pub fn error_against(&self, truth: &ExtendedPose) -> Result<Tangent9> {
        match &self.belief {
            Belief::Inekf(s) => s.error_against(truth),
            Belief::Mekf(s) => {
                let r_hat = s.rotation();
                let dtheta = so3_log(&(r_hat.inverse() * truth.r))?;
                Ok(Tangent9::from_parts(&dtheta, &(truth.v - s.v), &(truth.p - s.p)))
            }
        }
    }

    /// Normalized estimation error squared, `ξᵀ Σ⁻¹ ξ`.
    pub fn nees(&self, truth: &ExtendedPose) -> Result<f64> {
        let xi = self.error_against(truth)?;
        let cov = self.covariance();
        let chol = cov.cholesky().ok_or(Error::NonFinite("covariance is not positive definite"))?;
        Ok(xi.0.dot(&chol.solve(&xi.0)))
    }

    pub fn predict(&mut self, imu: &ImuSample, dt: f64) -> Result<()> {
        let p = &self.params;
        self.belief = match &self.belief {
            Belief::Inekf(s) => Belief::Inekf(inekf::predict_with_gravity(s, imu, dt, &p.noise, &p.gravity)?),
            Belief::Mekf(s) => Belief::Mekf(mekf::mekf_predict_with_gravity(s, imu, dt, &p.noise, &p.gravity)?),
        };
        Ok(())
    }

    /// Applies `next` or, for the recoverable rejections, counts the skip and keeps the belief.
    fn settle(&mut self, next: Result<Belief>) -> Result<bool> {
        match next {
            Ok(b) => {
                self.belief = b;
                Ok(true)
            }
            Err(Error::Gated { .. }) => {
                self.skips.gated += 1;
                Ok(false)
            }
            Err(Error::GimbalLock) => {
                self.skips.gimbal_lock += 1;
                Ok(false)
            }
            Err(Error::Unobservable { .. }) => {
                self.skips.unobservable += 1;
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn inekf_orientation(
        &self,
        s: &FilterState,
        built: Result<(inekf::OrientationMeasurement, measurements::ZHatRule)>,
    ) -> Result<Belief> {
        let (meas, rule) = built?;
        Ok(Belief::Inekf(measurements::apply_orientation(s, &meas, rule, self.params.gate)?))
    }

    /// Returns whether the update was applied.
    pub fn update_roll_pitch(&mut self, r: &RollPitchReading) -> Result<bool> {
        let next = match &self.belief {
            Belief::Inekf(s) => self.inekf_orientation(s, measurements::make_roll_pitch(r)),
            Belief::Mekf(s) => mekf::mekf_update_rollpitch(s, r).map(Belief::Mekf),
        };
        self.settle(next)
    }

    pub fn update_heading(&mut self, h: &HeadingReading) -> Result<bool> {
        let next = match &self.belief {
            Belief::Inekf(s) => self.inekf_orientation(s, measurements::make_heading(h)),
            Belief::Mekf(s) => mekf::mekf_update_heading(s, h).map(Belief::Mekf),
        };
        self.settle(next)
    }

    /// Full orientation rebuilt from a heading and the paired roll/pitch reading.
    pub fn update_full(&mut self, h: &HeadingReading, rp: &RollPitchReading) -> Result<bool> {
        let next = match &self.belief {
            Belief::Inekf(s) => self.inekf_orientation(s, measurements::make_reconstructed(h, rp)),
            Belief::Mekf(s) => mekf::mekf_update_full(s, rp, h).map(Belief::Mekf),
        };
        self.settle(next)
    }

    pub fn update_gps(&mut self, g: &GpsReading) -> Result<bool> {
        let next = match &self.belief {
            Belief::Inekf(s) => measurements::make_gps(g)
                .and_then(|m| measurements::apply_position(s, &m))
                .map(Belief::Inekf),
            Belief::Mekf(s) => mekf::mekf_update_gps(s, g).map(Belief::Mekf),
        };
        self.settle(next)
    }
}

/// Initial covariance for a rotation, velocity and position standard deviation
/// given in the world frame, mapped into each filter's error coordinates.
pub fn initial_covariance(kind: FilterKind, r_hat: &Rotation, sigma_rot: f64, sigma_vel: Vector3<f64>, sigma_pos: Vector3<f64>) -> Matrix9 {
    let mut cov = Matrix9::zeros();
    let rot = nalgebra::Matrix3::identity() * sigma_rot.powi(2);
    let vel = nalgebra::Matrix3::from_diagonal(&sigma_vel.component_mul(&sigma_vel));
    let pos = nalgebra::Matrix3::from_diagonal(&sigma_pos.component_mul(&sigma_pos));
    cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    match kind {
        // Left-invariant velocity and position errors live in the body frame.
        FilterKind::Inekf => {
            let rt = r_hat.matrix().transpose();
            cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rt * vel * rt.transpose()));
            cov.fixed_view_mut::<3, 3>(6, 6).copy_from(&(rt * pos * rt.transpose()));
        }
        FilterKind::Mekf => {
            cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&vel);
            cov.fixed_view_mut::<3, 3>(6, 6).copy_from(&pos);
        }
    }
    cov
}
