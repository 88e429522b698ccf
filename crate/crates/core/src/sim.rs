//! Synthetic wave trajectory, sensor simulation, horizon projection, the
//! event-driven filter engine and the Monte-Carlo runner.
//!
//! Every sensor fires on the IMU grid: a sensor at `f` Hz emits at IMU step `k`
//! (k ≥ 1) whenever `⌊k·f/f_imu⌋` advances, so its first sample arrives one
//! period after the start. Each run draws its noise
//! from ChaCha8 streams keyed by `(seed, run, sensor)`, so runs can be executed
//! in any order or in parallel and still produce identical numbers.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{Read, Write};
use std::ops::ControlFlow;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimator::{initial_covariance, Estimator, EstimatorParams, FilterKind, SkipCounts};
use crate::horizon::{camera_to_body, horizon_to_reading, CameraIntrinsics, HorizonGeometry, HorizonOptions, Segment};
use crate::inekf::{ImuSample, ProcessNoise, GRAVITY};
use crate::liegroup::{so3_exp, ExtendedPose, Rotation};
use crate::measurements::{nearest_in_time, GpsReading, HeadingReading, RollPitchReading, PAIRING_WINDOW};
use crate::mekf::wrap_angle;
use crate::{Error, Result};

/// True pose at `t` with the body rate and specific force an ideal strapdown IMU
/// reports for the interval that starts at `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthState {
    pub t: f64,
    pub pose: ExtendedPose,
    pub omega_body: Vector3<f64>,
    pub accel_body: Vector3<f64>,
}

/// Straight-line run on a constant heading with sinusoidal roll, pitch and heave.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub roll_amplitude_deg: f64,
    pub roll_period_s: f64,
    pub pitch_amplitude_deg: f64,
    pub pitch_period_s: f64,
    pub heave_amplitude_m: f64,
    pub heave_period_s: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams {
            speed_mps: 3.33,
            heading_deg: 30.0,
            roll_amplitude_deg: 5.0,
            roll_period_s: 4.0,
            pitch_amplitude_deg: 5.0,
            pitch_period_s: 6.0,
            heave_amplitude_m: 0.2,
            heave_period_s: 5.0,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.speed_mps,
            self.heading_deg,
            self.roll_amplitude_deg,
            self.roll_period_s,
            self.pitch_amplitude_deg,
            self.pitch_period_s,
            self.heave_amplitude_m,
            self.heave_period_s,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("trajectory parameters must be finite".into()));
        }
        if self.roll_period_s <= 0.0 || self.pitch_period_s <= 0.0 || self.heave_period_s <= 0.0 {
            return Err(Error::Config("trajectory periods must be positive".into()));
        }
        if self.roll_amplitude_deg.abs() >= 80.0 || self.pitch_amplitude_deg.abs() >= 80.0 {
            return Err(Error::Config("roll/pitch amplitudes must stay below 80°".into()));
        }
        Ok(())
    }

    /// Value, first and second derivative of `A·sin(2πt/T)`.
    fn wave(amp: f64, period: f64, t: f64) -> (f64, f64, f64) {
        let w = TAU / period;
        let (s, c) = (w * t).sin_cos();
        (amp * s, amp * w * c, -amp * w * w * s)
    }

    /// Pose with the instantaneous body rate and specific force at `t`.
    pub fn state_at(&self, t: f64) -> TruthState {
        let (roll, droll, _) = Self::wave(self.roll_amplitude_deg.to_radians(), self.roll_period_s, t);
        let (pitch, dpitch, _) = Self::wave(self.pitch_amplitude_deg.to_radians(), self.pitch_period_s, t);
        let (z, dz, ddz) = Self::wave(self.heave_amplitude_m, self.heave_period_s, t);
        let yaw = self.heading_deg.to_radians();
        let dir = Vector3::new(yaw.cos(), yaw.sin(), 0.0);

        let r = Rotation::from_roll_pitch_yaw(roll, pitch, yaw);
        let p = dir * (self.speed_mps * t) + Vector3::new(0.0, 0.0, z);
        let v = dir * self.speed_mps + Vector3::new(0.0, 0.0, dz);
        let a_world = Vector3::new(0.0, 0.0, ddz);

        // Z-Y-X Euler rates to body rates, with constant yaw.
        let (sr, cr) = roll.sin_cos();
        let omega_body = Vector3::new(droll, dpitch * cr, -dpitch * sr);
        let accel_body = r.inverse().rotate(&(a_world - GRAVITY));
        TruthState { t, pose: ExtendedPose::new(r, v, p), omega_body, accel_body }
    }
}

pub fn generate_trajectory(duration: f64, dt: f64, params: &TrajectoryParams) -> Result<Vec<TruthState>> {
    if !(duration > 0.0 && duration.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("duration {duration} and dt {dt} must be positive")));
    }
    params.validate()?;
    let n = (duration / dt).round() as usize;
    let grid: Vec<TruthState> = (0..=n + 1).map(|k| params.state_at(k as f64 * dt)).collect();
    // Interval increments, so that integrating sample k over dt lands exactly on
    // the rotation and velocity of sample k + 1.
    grid.windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let omega_body = crate::liegroup::so3_log(&(a.pose.r.inverse() * b.pose.r))? / dt;
            let accel_body = a.pose.r.inverse().rotate(&((b.pose.v - a.pose.v) / dt - GRAVITY));
            Ok(TruthState { omega_body, accel_body, ..*a })
        })
        .collect()
}

/// Sensor rates (Hz) and noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSchedule {
    pub imu_rate_hz: f64,
    pub gyro_std: f64,
    pub accel_std: f64,
    pub gps_rate_hz: f64,
    pub gps_std_xy_m: f64,
    pub gps_std_z_m: f64,
    pub heading_rate_hz: f64,
    pub heading_std_deg: f64,
    pub rollpitch_rate_hz: f64,
    pub rollpitch_std_deg: f64,
    /// Emit exact truth while still reporting the configured stds to the filter.
    pub noise_free: bool,
}

impl Default for SensorSchedule {
    fn default() -> Self {
        SensorSchedule {
            imu_rate_hz: 100.0,
            gyro_std: 0.002,
            accel_std: 0.04,
            gps_rate_hz: 1.0,
            gps_std_xy_m: 1.75,
            gps_std_z_m: 5.0,
            heading_rate_hz: 1.0,
            heading_std_deg: 1.0,
            rollpitch_rate_hz: 30.0,
            rollpitch_std_deg: 2.0,
            noise_free: false,
        }
    }
}

impl SensorSchedule {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.imu_rate_hz, self.gps_rate_hz, self.heading_rate_hz, self.rollpitch_rate_hz];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("sensor rates must be positive".into()));
        }
        if rates[1..].iter().any(|r| *r > self.imu_rate_hz) {
            return Err(Error::Config("aiding sensors cannot run faster than the IMU".into()));
        }
        let stds = [
            self.gyro_std,
            self.accel_std,
            self.gps_std_xy_m,
            self.gps_std_z_m,
            self.heading_std_deg,
            self.rollpitch_std_deg,
        ];
        if stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("sensor noise stds must be positive".into()));
        }
        Ok(())
    }

    pub fn process_noise(&self, position_random_walk: f64) -> ProcessNoise {
        ProcessNoise::from_sample_stds(self.gyro_std, self.accel_std, self.imu_rate_hz, position_random_walk)
    }

    fn fires(&self, rate: f64, k: usize) -> bool {
        let tick = |k: usize| (k as f64 * rate / self.imu_rate_hz + 1e-9).floor();
        k > 0 && tick(k) > tick(k - 1)
    }
}

/// One simulated run's measurements, each list sorted by time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorStream {
    pub imu: Vec<ImuSample>,
    pub gps: Vec<GpsReading>,
    pub heading: Vec<HeadingReading>,
    pub roll_pitch: Vec<RollPitchReading>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    Imu(ImuSample),
    RollPitch(RollPitchReading),
    Heading(HeadingReading),
    Gps(GpsReading),
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::Imu(s) => s.t,
            Event::RollPitch(r) => r.t,
            Event::Heading(h) => h.t,
            Event::Gps(g) => g.t,
        }
    }

    fn order(&self) -> u8 {
        match self {
            Event::Imu(_) => 0,
            Event::RollPitch(_) => 1,
            Event::Heading(_) => 2,
            Event::Gps(_) => 3,
        }
    }
}

impl SensorStream {
    /// All samples merged by time; at equal times the IMU sample comes first.
    pub fn events(&self) -> Vec<Event> {
        let mut out: Vec<Event> = self
            .imu
            .iter()
            .map(|s| Event::Imu(*s))
            .chain(self.roll_pitch.iter().map(|r| Event::RollPitch(*r)))
            .chain(self.heading.iter().map(|h| Event::Heading(*h)))
            .chain(self.gps.iter().map(|g| Event::Gps(*g)))
            .collect();
        out.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.order().cmp(&b.order())));
        out
    }
}

const STREAM_IMU: u64 = 0;
const STREAM_GPS: u64 = 1;
const STREAM_HEADING: u64 = 2;
const STREAM_ROLLPITCH: u64 = 3;
const STREAM_INIT: u64 = 4;

fn rng_for(seed: u64, run: u64, sensor: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run * 16 + sensor);
    rng
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Noisy IMU, GPS, heading and roll/pitch samples for run `run` of `seed`.
///
/// `truth` must be sampled on the IMU grid.
pub fn simulate_sensors(truth: &[TruthState], schedule: &SensorSchedule, seed: u64, run: u64) -> Result<SensorStream> {
    schedule.validate()?;
    if truth.is_empty() {
        return Err(Error::InvalidInput("empty truth trajectory".into()));
    }
    let scale = if schedule.noise_free { 0.0 } else { 1.0 };
    let mut imu_rng = rng_for(seed, run, STREAM_IMU);
    let mut gps_rng = rng_for(seed, run, STREAM_GPS);
    let mut heading_rng = rng_for(seed, run, STREAM_HEADING);
    let mut rp_rng = rng_for(seed, run, STREAM_ROLLPITCH);
    let heading_std = schedule.heading_std_deg.to_radians();
    let rp_std = schedule.rollpitch_std_deg.to_radians();

    let mut out = SensorStream::default();
    for (k, s) in truth.iter().enumerate() {
        out.imu.push(ImuSample {
            t: s.t,
            gyro: s.omega_body + gauss3(&mut imu_rng) * (scale * schedule.gyro_std),
            accel: s.accel_body + gauss3(&mut imu_rng) * (scale * schedule.accel_std),
        });
        let (roll, pitch, yaw) = s.pose.r.roll_pitch_yaw();
        if schedule.fires(schedule.rollpitch_rate_hz, k) {
            let n = Vector3::new(gauss(&mut rp_rng), gauss(&mut rp_rng), 0.0) * (scale * rp_std);
            out.roll_pitch.push(RollPitchReading {
                phi: roll + n.x,
                theta: pitch + n.y,
                sigma_phi: rp_std,
                sigma_theta: rp_std,
                t: s.t,
            });
        }
        if schedule.fires(schedule.heading_rate_hz, k) {
            out.heading.push(HeadingReading {
                psi: wrap_angle(yaw + scale * heading_std * gauss(&mut heading_rng)),
                sigma_psi: heading_std,
                t: s.t,
            });
        }
        if schedule.fires(schedule.gps_rate_hz, k) {
            let n = gauss3(&mut gps_rng).component_mul(&Vector3::new(
                schedule.gps_std_xy_m,
                schedule.gps_std_xy_m,
                schedule.gps_std_z_m,
            ));
            out.gps.push(GpsReading {
                xyz: s.pose.p + n * scale,
                sigma_xy: schedule.gps_std_xy_m,
                sigma_z: schedule.gps_std_z_m,
                t: s.t,
            });
        }
    }
    Ok(out)
}

/// Projects the geometric horizon seen from `pose` into the image, as the chord
/// between the left and right image borders.
///
/// For each border column the pixel row is found where the viewing ray makes the
/// horizon angle `α` with the local down direction (an exact ray/cone intersection).
pub fn project_horizon_segment(
    pose: &ExtendedPose,
    cam: &CameraIntrinsics,
    geom: &HorizonGeometry,
    mount_pitch: f64,
) -> Result<Segment> {
    cam.validate()?;
    geom.validate()?;
    let r_wc = pose.r.matrix() * camera_to_body(mount_pitch).matrix();
    let dip = FRAC_PI_2 - crate::horizon::horizon_dip(geom);
    let (s2, c2) = (dip.sin().powi(2), dip.cos().powi(2));
    let row_at = |x: f64| -> Result<f64> {
        // world ray a + y·b for pixel (x, y)
        let a = r_wc * Vector3::new((x - cam.c_x) / cam.f_x, -cam.c_y / cam.f_y, 1.0);
        let b = r_wc * Vector3::new(0.0, 1.0 / cam.f_y, 0.0);
        let qa = c2 * b.z * b.z - s2 * (b.x * b.x + b.y * b.y);
        let qb = 2.0 * (c2 * a.z * b.z - s2 * (a.x * b.x + a.y * b.y));
        let qc = c2 * a.z * a.z - s2 * (a.x * a.x + a.y * a.y);
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < -1e-12 * qb * qb || qa == 0.0 {
            return Err(Error::HorizonOutOfFrame);
        }
        let sq = disc.max(0.0).sqrt();
        // numerically stable pair of roots
        let q = -0.5 * (qb + qb.signum() * sq);
        let roots = [q / qa, if q != 0.0 { qc / q } else { q / qa }];
        let below = |y: f64| {
            let d = a + b * y;
            (d.z / d.norm() + dip.sin()).abs()
        };
        let y = if below(roots[0]) <= below(roots[1]) { roots[0] } else { roots[1] };
        if !(0.0..=cam.height).contains(&y) {
            return Err(Error::HorizonOutOfFrame);
        }
        Ok(y)
    };
    Ok(Segment::new(0.0, row_at(0.0)?, cam.width, row_at(cam.width)?))
}

/// How orientation readings are folded into the filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpdateStrategy {
    /// Roll/pitch and heading as separate partial updates.
    Partial,
    /// Each heading paired with the nearest roll/pitch reading as one full-orientation update.
    ReconstructedFull,
    /// Heading and GPS only.
    NoRollPitch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementMode {
    #[serde(rename = "partial-30hz")]
    Partial30Hz,
    #[serde(rename = "partial-6hz")]
    Partial6Hz,
    #[serde(rename = "reconstructed-full-1hz")]
    ReconstructedFull1Hz,
    #[serde(rename = "no-rollpitch")]
    NoRollPitch,
}

impl MeasurementMode {
    pub const ALL: [MeasurementMode; 4] = [
        MeasurementMode::Partial30Hz,
        MeasurementMode::Partial6Hz,
        MeasurementMode::ReconstructedFull1Hz,
        MeasurementMode::NoRollPitch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MeasurementMode::Partial30Hz => "partial-30hz",
            MeasurementMode::Partial6Hz => "partial-6hz",
            MeasurementMode::ReconstructedFull1Hz => "reconstructed-full-1hz",
            MeasurementMode::NoRollPitch => "no-rollpitch",
        }
    }

    pub fn strategy(&self) -> UpdateStrategy {
        match self {
            MeasurementMode::Partial30Hz | MeasurementMode::Partial6Hz => UpdateStrategy::Partial,
            MeasurementMode::ReconstructedFull1Hz => UpdateStrategy::ReconstructedFull,
            MeasurementMode::NoRollPitch => UpdateStrategy::NoRollPitch,
        }
    }

    /// Roll/pitch rate this mode implies, if it fixes one.
    pub fn rollpitch_rate_hz(&self) -> Option<f64> {
        match self {
            MeasurementMode::Partial30Hz => Some(30.0),
            MeasurementMode::Partial6Hz => Some(6.0),
            _ => None,
        }
    }
}

impl std::str::FromStr for MeasurementMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MeasurementMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown measurement mode '{s}'")))
    }
}

/// Runs `est` over `events`, calling `record` with the settled belief once per
/// IMU step (after that step's measurements) and once at the end.
///
/// Each IMU sample is held until the next one arrives and then integrated over
/// the gap, so measurements stamped at an IMU time update the belief at that time.
pub fn run_events<F>(est: &mut Estimator, events: &[Event], strategy: UpdateStrategy, mut record: F) -> Result<()>
where
    F: FnMut(f64, &Estimator) -> ControlFlow<()>,
{
    let roll_pitch: Vec<RollPitchReading> = match strategy {
        UpdateStrategy::ReconstructedFull => events
            .iter()
            .filter_map(|e| match e {
                Event::RollPitch(r) => Some(*r),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    };
    let mut pending: Option<ImuSample> = None;
    for ev in events {
        match ev {
            Event::Imu(s) => {
                if let Some(prev) = pending {
                    if record(est.time(), est).is_break() {
                        return Ok(());
                    }
                    let dt = s.t - est.time();
                    est.predict(&prev, dt)?;
                }
                pending = Some(*s);
            }
            Event::RollPitch(r) => {
                if strategy == UpdateStrategy::Partial {
                    est.update_roll_pitch(r)?;
                }
            }
            Event::Heading(h) => match strategy {
                UpdateStrategy::ReconstructedFull => {
                    if let Some(rp) = nearest_in_time(&roll_pitch, h.t, PAIRING_WINDOW) {
                        est.update_full(h, rp)?;
                    } else {
                        est.update_heading(h)?;
                    }
                }
                _ => {
                    est.update_heading(h)?;
                }
            },
            Event::Gps(g) => {
                est.update_gps(g)?;
            }
        }
    }
    let _ = record(est.time(), est);
    Ok(())
}

/// Initial perturbation standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitNoise {
    pub orientation_deg: f64,
    pub velocity_mps: f64,
    pub position_xy_m: f64,
    pub position_z_m: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        InitNoise { orientation_deg: 60.0, velocity_mps: 4.0, position_xy_m: 4.0, position_z_m: 1.0 }
    }
}

impl InitNoise {
    pub fn validate(&self) -> Result<()> {
        let all = [self.orientation_deg, self.velocity_mps, self.position_xy_m, self.position_z_m];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("initial noise stds must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn sigmas(&self) -> (f64, Vector3<f64>, Vector3<f64>) {
        // a zero std still needs a little belief covariance to stay positive definite
        let floor = |x: f64, min: f64| x.max(min);
        (
            floor(self.orientation_deg.to_radians(), 1e-3),
            Vector3::repeat(floor(self.velocity_mps, 1e-2)),
            Vector3::new(
                floor(self.position_xy_m, 1e-2),
                floor(self.position_xy_m, 1e-2),
                floor(self.position_z_m, 1e-2),
            ),
        )
    }

    /// The filter's starting belief and covariance for a perturbed copy of `truth`.
    pub fn initial_belief(&self, kind: FilterKind, x0: &ExtendedPose) -> (ExtendedPose, nalgebra::SMatrix<f64, 9, 9>) {
        let (s_rot, s_vel, s_pos) = self.sigmas();
        (*x0, initial_covariance(kind, &x0.r, s_rot, s_vel, s_pos))
    }

    /// Truth perturbed per these stds. The rotation is `R·exp(δθ)` with `δθ`
    /// isotropic and its angle clipped below π.
    pub fn perturb(&self, truth: &ExtendedPose, seed: u64, run: u64) -> ExtendedPose {
        let mut rng = rng_for(seed, run, STREAM_INIT);
        let mut dtheta = gauss3(&mut rng) * self.orientation_deg.to_radians();
        let limit = PI - 0.1;
        if dtheta.norm() > limit {
            dtheta *= limit / dtheta.norm();
        }
        let dv = gauss3(&mut rng) * self.velocity_mps;
        let dp = gauss3(&mut rng).component_mul(&Vector3::new(self.position_xy_m, self.position_xy_m, self.position_z_m));
        ExtendedPose::new(truth.r * so3_exp(&dtheta), truth.v + dv, truth.p + dp)
    }
}

/// Which sensors feed the filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorToggles {
    pub gps: bool,
    pub heading: bool,
    pub roll_pitch: bool,
}

impl Default for SensorToggles {
    fn default() -> Self {
        SensorToggles { gps: true, heading: true, roll_pitch: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_runs: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub init: InitNoise,
    pub sensors: SensorToggles,
    /// Overrides the roll/pitch rate implied by the measurement mode.
    pub rollpitch_rate_override_hz: Option<f64>,
    pub divergence_xy_m: f64,
    /// Orientation innovations larger than this angle, rad, are rejected.
    pub gate_rad: f64,
    pub position_random_walk: f64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub trajectory: TrajectoryParams,
    pub schedule: SensorSchedule,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            n_runs: 100,
            seed: 1,
            duration_s: 30.0,
            init: InitNoise::default(),
            sensors: SensorToggles::default(),
            rollpitch_rate_override_hz: None,
            divergence_xy_m: 1e3,
            gate_rad: crate::inekf::DEFAULT_GATE,
            position_random_walk: 1e-6,
            threads: 0,
            trajectory: TrajectoryParams::default(),
            schedule: SensorSchedule::default(),
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if !(self.divergence_xy_m > 0.0) {
            return Err(Error::Config("divergence_xy_m must be positive".into()));
        }
        if !(self.gate_rad > 0.0 && self.gate_rad <= std::f64::consts::PI) {
            return Err(Error::Config("gate_rad must be in (0, π]".into()));
        }
        if !(self.position_random_walk >= 0.0 && self.position_random_walk.is_finite()) {
            return Err(Error::Config("position_random_walk must be non-negative".into()));
        }
        if let Some(r) = self.rollpitch_rate_override_hz {
            if !(r > 0.0 && r <= self.schedule.imu_rate_hz) {
                return Err(Error::Config("rollpitch_rate_override_hz must be in (0, imu_rate_hz]".into()));
            }
        }
        self.init.validate()?;
        self.trajectory.validate()?;
        self.schedule.validate()
    }

    pub fn schedule_for(&self, mode: MeasurementMode) -> SensorSchedule {
        let mut s = self.schedule;
        if let Some(rate) = self.rollpitch_rate_override_hz.or(mode.rollpitch_rate_hz()) {
            s.rollpitch_rate_hz = rate;
        }
        s
    }

    pub fn estimator_params(&self) -> EstimatorParams {
        EstimatorParams {
            noise: self.schedule.process_noise(self.position_random_walk),
            gate: self.gate_rad,
            ..Default::default()
        }
    }

    pub fn truth(&self) -> Result<Vec<TruthState>> {
        generate_trajectory(self.duration_s, 1.0 / self.schedule.imu_rate_hz, &self.trajectory)
    }
}

/// Everything a single run needs: the perturbed starting belief and the sensor stream.
#[derive(Clone, Debug, PartialEq)]
pub struct RunInputs {
    pub run: u64,
    pub x0: ExtendedPose,
    pub t0: f64,
    pub stream: SensorStream,
}

impl RunInputs {
    pub fn new(cfg: &MonteCarloConfig, truth: &[TruthState], mode: MeasurementMode, run: u64) -> Result<Self> {
        let mut stream = simulate_sensors(truth, &cfg.schedule_for(mode), cfg.seed, run)?;
        if !cfg.sensors.gps {
            stream.gps.clear();
        }
        if !cfg.sensors.heading {
            stream.heading.clear();
        }
        if !cfg.sensors.roll_pitch || mode.strategy() == UpdateStrategy::NoRollPitch {
            stream.roll_pitch.clear();
        }
        let x0 = cfg.init.perturb(&truth[0].pose, cfg.seed, run);
        Ok(RunInputs { run, x0, t0: truth[0].t, stream })
    }

    pub fn estimator(&self, cfg: &MonteCarloConfig, kind: FilterKind) -> Estimator {
        let (x0, cov) = cfg.init.initial_belief(kind, &self.x0);
        Estimator::new(kind, x0, cov, self.t0, cfg.estimator_params())
    }
}

/// Absolute errors at one recorded instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepError {
    pub t: f64,
    pub roll: f64,
    pub pitch: f64,
    /// wrapped into [0, π]
    pub yaw: f64,
    /// geodesic angle between estimated and true attitude
    pub orientation: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub xy: f64,
    pub vel: f64,
    pub nees: f64,
}

impl StepError {
    pub fn between(est: &ExtendedPose, truth: &ExtendedPose, t: f64) -> StepError {
        let (r1, p1, y1) = est.r.roll_pitch_yaw();
        let (r0, p0, y0) = truth.r.roll_pitch_yaw();
        let d = est.p - truth.p;
        StepError {
            t,
            roll: wrap_angle(r1 - r0).abs(),
            pitch: wrap_angle(p1 - p0).abs(),
            yaw: wrap_angle(y1 - y0).abs(),
            orientation: est.r.angle_to(&truth.r),
            x: d.x,
            y: d.y,
            z: d.z.abs(),
            xy: d.xy().norm(),
            vel: (est.v - truth.v).norm(),
            nees: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub run: u64,
    pub steps: Vec<StepError>,
    pub mean_xy: f64,
    pub mean_z: f64,
    pub mean_roll: f64,
    pub mean_pitch: f64,
    pub mean_yaw: f64,
    pub mean_vel: f64,
    pub mean_nees: f64,
    pub diverged: bool,
    pub skips: SkipCounts,
}

impl RunMetrics {
    pub fn from_steps(run: u64, steps: Vec<StepError>, diverged: bool, skips: SkipCounts) -> RunMetrics {
        let mean = |f: fn(&StepError) -> f64| {
            let vals: Vec<f64> = steps.iter().map(f).filter(|x| x.is_finite()).collect();
            if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 }
        };
        RunMetrics {
            run,
            mean_xy: mean(|s| s.xy),
            mean_z: mean(|s| s.z),
            mean_roll: mean(|s| s.roll),
            mean_pitch: mean(|s| s.pitch),
            mean_yaw: mean(|s| s.yaw),
            mean_vel: mean(|s| s.vel),
            mean_nees: mean(|s| s.nees),
            steps,
            diverged,
            skips,
        }
    }

    /// Mean geodesic orientation error over the last `window` seconds recorded.
    pub fn final_orientation_error(&self, window: f64) -> f64 {
        let Some(end) = self.steps.last().map(|s| s.t) else { return f64::NAN };
        let tail: Vec<f64> = self.steps.iter().filter(|s| s.t >= end - window - 1e-9).map(|s| s.orientation).collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Not diverged and the final-window mean orientation error is below `threshold` rad.
    pub fn converged(&self, window: f64, threshold: f64) -> bool {
        !self.diverged && self.final_orientation_error(window) < threshold
    }
}

/// Runs `inputs` through a `kind` filter and scores it against `truth`.
pub fn score_run(
    cfg: &MonteCarloConfig,
    truth: &[TruthState],
    inputs: &RunInputs,
    kind: FilterKind,
    strategy: UpdateStrategy,
) -> RunMetrics {
    let mut est = inputs.estimator(cfg, kind);
    let events = inputs.stream.events();
    let mut steps = Vec::with_capacity(truth.len());
    let mut diverged = false;
    let rate = cfg.schedule.imu_rate_hz;
    let outcome = run_events(&mut est, &events, strategy, |t, e| {
        let k = ((t - truth[0].t) * rate).round() as usize;
        let Some(tr) = truth.get(k) else { return ControlFlow::Continue(()) };
        let pose = e.pose();
        if !e.is_finite() || !pose.is_finite() {
            diverged = true;
            return ControlFlow::Break(());
        }
        let mut step = StepError::between(&pose, &tr.pose, t);
        step.nees = e.nees(&tr.pose).unwrap_or(f64::NAN);
        let bad = !(step.xy <= cfg.divergence_xy_m);
        steps.push(step);
        if bad {
            diverged = true;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    });
    if outcome.is_err() {
        diverged = true;
    }
    RunMetrics::from_steps(inputs.run, steps, diverged, est.skips)
}

/// Runs `n_runs` seeded runs of `kind` under `mode`, in parallel; the result is
/// in run order and does not depend on the thread count.
pub fn run_monte_carlo(cfg: &MonteCarloConfig, kind: FilterKind, mode: MeasurementMode) -> Result<Vec<RunMetrics>> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..cfg.n_runs as u64)
            .into_par_iter()
            .map(|run| {
                let inputs = RunInputs::new(cfg, &truth, mode, run)?;
                Ok(score_run(cfg, &truth, &inputs, kind, mode.strategy()))
            })
            .collect()
    })
}

/// Mean, median and type-7 quartiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stats { mean: f64::NAN, median: f64::NAN, q1: f64::NAN, q3: f64::NAN };
        }
        v.sort_by(f64::total_cmp);
        Stats {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        }
    }
}

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-metric statistics over the non-diverged runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub n_runs: usize,
    pub n_diverged: usize,
    pub metrics: Vec<(&'static str, Stats)>,
}

impl Summary {
    pub fn get(&self, name: &str) -> Option<Stats> {
        self.metrics.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }
}

pub const METRIC_NAMES: [&str; 6] = ["mean_xy_m", "mean_z_m", "mean_roll_rad", "mean_pitch_rad", "mean_yaw_rad", "mean_vel_mps"];

pub fn summarize(metrics: &[RunMetrics]) -> Result<Summary> {
    if metrics.is_empty() {
        return Err(Error::InvalidInput("no runs to summarize".into()));
    }
    let ok: Vec<&RunMetrics> = metrics.iter().filter(|m| !m.diverged).collect();
    let getters: [fn(&RunMetrics) -> f64; 6] = [
        |m| m.mean_xy,
        |m| m.mean_z,
        |m| m.mean_roll,
        |m| m.mean_pitch,
        |m| m.mean_yaw,
        |m| m.mean_vel,
    ];
    let stats = METRIC_NAMES
        .iter()
        .zip(getters)
        .map(|(name, g)| (*name, Stats::of(&ok.iter().map(|m| g(m)).collect::<Vec<_>>())))
        .collect();
    Ok(Summary { n_runs: metrics.len(), n_diverged: metrics.len() - ok.len(), metrics: stats })
}

/// Writes a replay log: header, optional `init` row, then one row per event.
///
/// Rows are `t,sensor,values…` with
/// `init: r00..r22 (row-major), vx vy vz, px py pz`,
/// `imu: gx gy gz ax ay az`, `gps: x y z sigma_xy sigma_z`,
/// `heading: psi sigma_psi`, `rollpitch: phi theta sigma_phi sigma_theta`.
pub fn write_log<W: Write>(out: W, init: Option<(f64, &ExtendedPose)>, events: &[Event]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["t", "sensor", "values"])?;
    let row = |t: f64, name: &str, vals: &[f64]| -> Vec<String> {
        let mut r = vec![t.to_string(), name.to_string()];
        r.extend(vals.iter().map(|v| v.to_string()));
        r
    };
    if let Some((t, x)) = init {
        let m = x.r.matrix();
        let mut vals: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect();
        vals.extend(x.v.iter());
        vals.extend(x.p.iter());
        w.write_record(row(t, "init", &vals))?;
    }
    for ev in events {
        let rec = match ev {
            Event::Imu(s) => row(s.t, "imu", &[s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z]),
            Event::Gps(g) => row(g.t, "gps", &[g.xyz.x, g.xyz.y, g.xyz.z, g.sigma_xy, g.sigma_z]),
            Event::Heading(h) => row(h.t, "heading", &[h.psi, h.sigma_psi]),
            Event::RollPitch(r) => row(r.t, "rollpitch", &[r.phi, r.theta, r.sigma_phi, r.sigma_theta]),
        };
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayLog {
    pub init: Option<(f64, ExtendedPose)>,
    pub events: Vec<Event>,
    /// `horizon` rows that yielded no usable reading.
    pub horizon_rejected: usize,
}

/// Camera model used to turn `horizon` log rows into roll/pitch readings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonSensor {
    pub camera: CameraIntrinsics,
    pub geometry: HorizonGeometry,
    pub options: HorizonOptions,
    /// Std of the derived roll and pitch, rad.
    pub sigma: f64,
}

impl ReplayLog {
    pub fn has_roll_pitch(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::RollPitch(_)))
    }
}

/// Parses a replay log. Row numbers in errors count the header as line 1.
pub fn read_log<R: Read>(input: R) -> Result<ReplayLog> {
    read_log_with_horizon(input, None)
}

/// As [`read_log`], also accepting `t,horizon,x0,y0,x1,y1[,…]` rows of detected
/// pixel segments, which `horizon` converts into roll/pitch readings. Frames
/// with no usable horizon are counted and dropped.
pub fn read_log_with_horizon<R: Read>(input: R, horizon: Option<&HorizonSensor>) -> Result<ReplayLog> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(true).trim(csv::Trim::All).from_reader(input);
    let mut log = ReplayLog::default();
    let mut last_t = f64::NEG_INFINITY;
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let err = |message: String| Error::Log { line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() < 2 {
            return Err(err("expected at least t and sensor columns".into()));
        }
        let t: f64 = rec[0].parse().map_err(|_| err(format!("bad time '{}'", &rec[0])))?;
        if !t.is_finite() {
            return Err(err("non-finite time".into()));
        }
        let vals = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let sensor = &rec[1];
        let need = |n: usize| {
            if vals.len() == n {
                Ok(())
            } else {
                Err(err(format!("{sensor} row needs {n} values, got {}", vals.len())))
            }
        };
        if sensor != "init" {
            if t < last_t {
                return Err(err(format!("time {t} goes backwards")));
            }
            last_t = t;
        }
        let v3 = |i: usize| Vector3::new(vals[i], vals[i + 1], vals[i + 2]);
        let ev = match sensor {
            "init" => {
                need(15)?;
                if log.init.is_some() {
                    return Err(err("duplicate init row".into()));
                }
                let m = Matrix3::from_row_slice(&vals[..9]);
                let r = Rotation::from_matrix(m).map_err(|e| err(e.to_string()))?;
                log.init = Some((t, ExtendedPose::new(r, v3(9), v3(12))));
                continue;
            }
            "imu" => {
                need(6)?;
                Event::Imu(ImuSample { t, gyro: v3(0), accel: v3(3) })
            }
            "gps" => {
                need(5)?;
                let g = GpsReading { xyz: v3(0), sigma_xy: vals[3], sigma_z: vals[4], t };
                g.validate().map_err(|e| err(e.to_string()))?;
                Event::Gps(g)
            }
            "heading" => {
                need(2)?;
                let h = HeadingReading { psi: vals[0], sigma_psi: vals[1], t };
                h.validate().map_err(|e| err(e.to_string()))?;
                Event::Heading(h)
            }
            "rollpitch" => {
                need(4)?;
                let r = RollPitchReading { phi: vals[0], theta: vals[1], sigma_phi: vals[2], sigma_theta: vals[3], t };
                r.validate().map_err(|e| err(e.to_string()))?;
                Event::RollPitch(r)
            }
            "horizon" => {
                let Some(h) = horizon else {
                    return Err(err("horizon row without a camera configuration".into()));
                };
                if vals.is_empty() || vals.len() % 4 != 0 {
                    return Err(err(format!("horizon row needs groups of 4 values, got {}", vals.len())));
                }
                let segments: Vec<Segment> = vals.chunks(4).map(|c| Segment::new(c[0], c[1], c[2], c[3])).collect();
                match horizon_to_reading(&segments, &h.camera, &h.geometry, h.sigma, &h.options, t) {
                    Ok(r) => Event::RollPitch(r),
                    Err(Error::NoHorizon | Error::HorizonOutOfFrame | Error::DegenerateSegment | Error::InvalidInput(_)) => {
                        log.horizon_rejected += 1;
                        continue;
                    }
                    Err(e) => return Err(err(e.to_string())),
                }
            }
            other => return Err(err(format!("unknown sensor '{other}'"))),
        };
        if let Event::Imu(s) = &ev {
            if !s.is_finite() {
                return Err(err("non-finite IMU sample".into()));
            }
        }
        log.events.push(ev);
    }
    if log.events.is_empty() {
        return Err(Error::Log { line: 1, message: "log has no samples".into() });
    }
    if !log.events.iter().any(|e| matches!(e, Event::Imu(_))) {
        return Err(Error::Log { line: 1, message: "log has no IMU samples".into() });
    }
    Ok(log)
}
