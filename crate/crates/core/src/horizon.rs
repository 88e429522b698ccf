//! Roll and pitch from a detected horizon line segment.
//!
//! Pixel coordinates have x to the right and y down. The camera looks along the
//! body x-axis (forward) with its image x-axis along body −y and its image
//! y-axis along body −z. Body roll and pitch follow the `rot_y(θ)·rot_x(φ)`
//! convention of the rest of the crate in a z-up world, so positive pitch is
//! nose-down and positive roll lowers the starboard side.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::liegroup::{rot_y, Rotation};
use crate::measurements::RollPitchReading;
use crate::{Error, Result};

/// Mean Earth radius, m.
pub const EARTH_RADIUS: f64 = 6.371e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub f_x: f64,
    pub f_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_x > 0.0 && self.f_y > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidInput("camera focal lengths and size must be positive".into()));
        }
        if !(0.0..=self.height).contains(&self.c_y) || !(0.0..=self.width).contains(&self.c_x) {
            return Err(Error::InvalidInput("principal point outside the image".into()));
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { f_x: 900.0, f_y: 900.0, c_x: 640.0, c_y: 360.0, width: 1280.0, height: 720.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonGeometry {
    /// Camera height above the sea surface, m.
    pub camera_height_v: f64,
    pub earth_radius_re: f64,
}

impl HorizonGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.camera_height_v > 0.0 && self.camera_height_v < self.earth_radius_re) {
            return Err(Error::InvalidInput("camera height must lie in (0, R_e)".into()));
        }
        Ok(())
    }
}

impl Default for HorizonGeometry {
    fn default() -> Self {
        HorizonGeometry { camera_height_v: 2.0, earth_radius_re: EARTH_RADIUS }
    }
}

/// A line segment between two pixel positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub p0: Vector2<f64>,
    pub p1: Vector2<f64>,
}

impl Segment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Segment { p0: Vector2::new(x0, y0), p1: Vector2::new(x1, y1) }
    }

    pub fn length(&self) -> f64 {
        (self.p1 - self.p0).norm()
    }

    /// Absolute angle from image-horizontal, in [0, π/2].
    pub fn tilt(&self) -> f64 {
        let d = self.p1 - self.p0;
        d.y.abs().atan2(d.x.abs())
    }

    /// Endpoints ordered by increasing x.
    pub fn left_to_right(&self) -> Segment {
        if self.p1.x < self.p0.x {
            Segment { p0: self.p1, p1: self.p0 }
        } else {
            *self
        }
    }
}

/// Options for [`horizon_to_reading`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonOptions {
    /// Segments steeper than `90° − vertical_cutoff_deg` are discarded.
    pub vertical_cutoff_deg: f64,
    /// Camera pitch relative to the body, rad, same sense as body pitch.
    pub mount_pitch: f64,
}

impl Default for HorizonOptions {
    fn default() -> Self {
        HorizonOptions { vertical_cutoff_deg: 45.0, mount_pitch: 0.0 }
    }
}

/// Rotation taking camera-frame vectors to the body frame.
pub fn camera_to_body(mount_pitch: f64) -> Rotation {
    let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    rot_y(mount_pitch) * Rotation::from_matrix_unchecked(base)
}

/// Drops near-vertical segments and returns the longest survivor.
pub fn filter_and_select(segments: &[Segment], vertical_cutoff_deg: f64) -> Result<Segment> {
    let max_tilt = (90.0 - vertical_cutoff_deg).to_radians();
    segments
        .iter()
        .filter(|s| s.length() > 0.0 && s.tilt() <= max_tilt)
        .max_by(|a, b| {
            a.length()
                .total_cmp(&b.length())
                .then_with(|| b.tilt().total_cmp(&a.tilt()))
        })
        .copied()
        .ok_or(Error::NoHorizon)
}

/// Image-plane roll `atan2(Δy, Δx)` after ordering endpoints left to right.
///
/// `Δy` is measured upward (`y₀ − y₁` in pixels), so a horizon that rises to
/// the right gives a positive roll.
pub fn roll_from_segment(s: &Segment) -> Result<f64> {
    if s.p0 == s.p1 {
        return Err(Error::DegenerateSegment);
    }
    let s = s.left_to_right();
    let (dx, dy_up) = (s.p1.x - s.p0.x, s.p0.y - s.p1.y);
    Ok(dy_up.atan2(dx))
}

/// Angle of pixel row `p_hy` below the optical axis, `atan2(p_hy − c_y, f_y)`.
pub fn declination_from_pixel(p_hy: f64, cam: &CameraIntrinsics) -> f64 {
    (p_hy - cam.c_y).atan2(cam.f_y)
}

/// Angle `α = asin(R_e / (R_e + V))` between the local vertical and the horizon ray.
pub fn horizon_dip(geom: &HorizonGeometry) -> f64 {
    (geom.earth_radius_re / (geom.earth_radius_re + geom.camera_height_v)).asin()
}

/// Nose-up pitch `α − θ_c − π/2` from the horizon angle `α` and the horizon's
/// inclination `θ_c` above the optical axis.
pub fn pitch_from_horizon(alpha: f64, theta_c: f64) -> f64 {
    alpha - theta_c - FRAC_PI_2
}

/// Row at which the infinite extension of `s` crosses the vertical centerline.
pub fn centerline_crossing(s: &Segment, cam: &CameraIntrinsics) -> Result<f64> {
    let s = s.left_to_right();
    let dx = s.p1.x - s.p0.x;
    if dx == 0.0 {
        return Err(Error::DegenerateSegment);
    }
    let xc = 0.5 * cam.width;
    Ok(s.p0.y + (xc - s.p0.x) * (s.p1.y - s.p0.y) / dx)
}

pub fn horizon_to_reading(
    segments: &[Segment],
    cam: &CameraIntrinsics,
    geom: &HorizonGeometry,
    sigma: f64,
    opts: &HorizonOptions,
    t: f64,
) -> Result<RollPitchReading> {
    let seg = filter_and_select(segments, opts.vertical_cutoff_deg)?;
    let phi = roll_from_segment(&seg)?;
    let p_hy = centerline_crossing(&seg, cam)?;
    let theta_c = -declination_from_pixel(p_hy, cam);
    let nose_up = pitch_from_horizon(horizon_dip(geom), theta_c);
    let reading = RollPitchReading {
        phi,
        theta: -nose_up - opts.mount_pitch,
        sigma_phi: sigma,
        sigma_theta: sigma,
        t,
    };
    reading.validate()?;
    Ok(reading)
}
