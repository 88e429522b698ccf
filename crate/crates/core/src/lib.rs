//! Left-invariant extended Kalman filtering on SE₂(3) for surface vessels that
//! observe only part of their orientation.
//!
//! Roll/pitch readings (for example from the visible horizon) and heading
//! readings (for example from a dual-antenna GPS) are folded into the filter as
//! SO(3) measurements in a yaw-only "planar" frame. The axes a reading cannot see
//! are given infinite variance, and the innovation covariance inverse is taken in
//! closed form in that limit.
//!
//! Modules:
//! - [`liegroup`]: SO(3)/SE₂(3) exp, log, adjoint, the rotation homomorphism and
//!   the roll/pitch projection.
//! - [`inekf`]: propagation and the generic orientation and position updates.
//! - [`measurements`]: builders for full, roll/pitch-only, heading-only and GPS
//!   measurements.
//! - [`horizon`]: roll and pitch from a detected horizon segment.
//! - [`mekf`]: quaternion multiplicative EKF baseline.
//! - [`sim`]: synthetic wave trajectory, sensor simulation and Monte-Carlo runner.
//! - [`cli`]: experiment configuration, CSV output and the command implementations.

pub mod cli;
pub mod estimator;
pub mod horizon;
pub mod inekf;
pub mod liegroup;
pub mod measurements;
pub mod mekf;
pub mod sim;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} is on the log branch cut at π")]
    BranchAmbiguity { angle: f64 },
    #[error("yaw is undefined at ±90° pitch")]
    GimbalLock,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("innovation covariance is singular or ill-conditioned (condition {condition:e})")]
    Unobservable { condition: f64 },
    #[error("innovation of {angle} rad exceeds the gate of {gate} rad")]
    Gated { angle: f64, gate: f64 },
    #[error("no horizon segment survived filtering")]
    NoHorizon,
    #[error("horizon is outside the image")]
    HorizonOutOfFrame,
    #[error("degenerate segment with coincident endpoints")]
    DegenerateSegment,
    #[error("config: {0}")]
    Config(String),
    #[error("log line {line}: {message}")]
    Log { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
