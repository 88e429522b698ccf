//! Experiment configuration, CSV output and the command implementations behind
//! the `asv-inekf` binary.
//!
//! Every command takes an [`ExperimentConfig`] (a TOML document, unknown keys
//! rejected) and writes only under its `output_dir`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::estimator::{Estimator, FilterKind, SkipCounts};
use crate::horizon::{CameraIntrinsics, HorizonGeometry, HorizonOptions};
use crate::liegroup::{rot_x, rot_y, rot_z, ExtendedPose};
use crate::sim::{
    read_log_with_horizon, run_events, run_monte_carlo, summarize, write_log, Event, HorizonSensor, InitNoise,
    MeasurementMode, MonteCarloConfig, RunInputs, RunMetrics, SensorSchedule, SensorToggles, Summary,
    TrajectoryParams, UpdateStrategy, METRIC_NAMES,
};
use crate::{Error, Result};

/// One filter run under one measurement mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub filter: FilterKind,
    pub mode: MeasurementMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessConfig {
    /// Position random-walk density, m²/s. Gyro and accel densities follow the sensor stds.
    pub position_random_walk: f64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        ProcessConfig { position_random_walk: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Orientation innovations above this angle, rad, are skipped.
    pub gate_rad: f64,
    /// A run whose XY error exceeds this, m, is marked diverged.
    pub divergence_xy_m: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { gate_rad: crate::inekf::DEFAULT_GATE, divergence_xy_m: 1e3 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub geometry: HorizonGeometry,
    pub options: HorizonOptions,
}

/// Accuracy study: every case over the same seeded runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_runs: usize,
    pub duration_s: f64,
    pub init: InitNoise,
    pub sensors: SensorToggles,
    pub rollpitch_rate_override_hz: Option<f64>,
    pub cases: Vec<Case>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            n_runs: 50,
            duration_s: 60.0,
            init: InitNoise { orientation_deg: 2.0, velocity_mps: 0.2, position_xy_m: 0.3, position_z_m: 0.3 },
            sensors: SensorToggles::default(),
            rollpitch_rate_override_hz: None,
            cases: vec![
                Case { filter: FilterKind::Inekf, mode: MeasurementMode::Partial30Hz },
                Case { filter: FilterKind::Mekf, mode: MeasurementMode::Partial30Hz },
                Case { filter: FilterKind::Inekf, mode: MeasurementMode::ReconstructedFull1Hz },
            ],
        }
    }
}

/// Convergence study: every filter under every mode from large initial errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub n_runs: usize,
    pub duration_s: f64,
    pub init: InitNoise,
    pub sensors: SensorToggles,
    pub filters: Vec<FilterKind>,
    pub modes: Vec<MeasurementMode>,
    /// Length of the written error trajectories, s.
    pub record_s: f64,
    pub record_rate_hz: f64,
    /// A run converged if its mean orientation error over the final `window_s`
    /// is below `threshold_deg`.
    pub window_s: f64,
    pub threshold_deg: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection {
            n_runs: 100,
            duration_s: 60.0,
            init: InitNoise::default(),
            sensors: SensorToggles::default(),
            filters: vec![FilterKind::Inekf, FilterKind::Mekf],
            modes: vec![MeasurementMode::Partial6Hz, MeasurementMode::NoRollPitch],
            record_s: 10.0,
            record_rate_hz: 10.0,
            window_s: 5.0,
            threshold_deg: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayStrategy {
    #[default]
    Partial,
    ReconstructedFull,
    NoRollpitch,
}

impl From<ReplayStrategy> for UpdateStrategy {
    fn from(s: ReplayStrategy) -> Self {
        match s {
            ReplayStrategy::Partial => UpdateStrategy::Partial,
            ReplayStrategy::ReconstructedFull => UpdateStrategy::ReconstructedFull,
            ReplayStrategy::NoRollpitch => UpdateStrategy::NoRollPitch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub filter: FilterKind,
    /// Used when the log has roll/pitch rows; logs without them replay as no-rollpitch.
    pub strategy: ReplayStrategy,
    /// Stds of the starting belief.
    pub init: InitNoise,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection { filter: FilterKind::Inekf, strategy: ReplayStrategy::Partial, init: InitNoise::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads for the Monte-Carlo runs; 0 picks one per core.
    pub threads: usize,
    pub trajectory: TrajectoryParams,
    pub sensors: SensorSchedule,
    pub process: ProcessConfig,
    pub filter: FilterConfig,
    pub camera: CameraIntrinsics,
    pub horizon: HorizonConfig,
    pub montecarlo: MonteCarloSection,
    pub convergence: ConvergenceSection,
    pub replay: ReplaySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("out"),
            seed: 1,
            threads: 0,
            trajectory: TrajectoryParams::default(),
            sensors: SensorSchedule::default(),
            process: ProcessConfig::default(),
            filter: FilterConfig::default(),
            camera: CameraIntrinsics::default(),
            horizon: HorizonConfig::default(),
            montecarlo: MonteCarloSection::default(),
            convergence: ConvergenceSection::default(),
            replay: ReplaySection::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(runs) = o.runs {
            self.montecarlo.n_runs = runs;
            self.convergence.n_runs = runs;
        }
        if let Some(threads) = o.threads {
            self.threads = threads;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.montecarlo_config().validate()?;
        self.convergence_config().validate()?;
        self.camera.validate()?;
        self.horizon.geometry.validate()?;
        if self.montecarlo.cases.is_empty() {
            return Err(Error::Config("montecarlo.cases is empty".into()));
        }
        let c = &self.convergence;
        if c.filters.is_empty() || c.modes.is_empty() {
            return Err(Error::Config("convergence.filters and convergence.modes must be non-empty".into()));
        }
        if !(c.record_s >= 0.0 && c.record_rate_hz > 0.0 && c.window_s > 0.0 && c.threshold_deg > 0.0) {
            return Err(Error::Config(
                "convergence.record_s must be non-negative and record_rate_hz, window_s, threshold_deg positive".into(),
            ));
        }
        self.replay.init.validate()
    }

    fn base(&self, n_runs: usize, duration_s: f64, init: InitNoise, sensors: SensorToggles) -> MonteCarloConfig {
        MonteCarloConfig {
            n_runs,
            seed: self.seed,
            duration_s,
            init,
            sensors,
            rollpitch_rate_override_hz: None,
            divergence_xy_m: self.filter.divergence_xy_m,
            gate_rad: self.filter.gate_rad,
            position_random_walk: self.process.position_random_walk,
            threads: self.threads,
            trajectory: self.trajectory,
            schedule: self.sensors,
        }
    }

    pub fn montecarlo_config(&self) -> MonteCarloConfig {
        let m = &self.montecarlo;
        MonteCarloConfig {
            rollpitch_rate_override_hz: m.rollpitch_rate_override_hz,
            ..self.base(m.n_runs, m.duration_s, m.init, m.sensors)
        }
    }

    pub fn convergence_config(&self) -> MonteCarloConfig {
        let c = &self.convergence;
        self.base(c.n_runs, c.duration_s, c.init, c.sensors)
    }

    /// Horizon rows in replay logs get the configured roll/pitch std.
    pub fn horizon_sensor(&self) -> HorizonSensor {
        HorizonSensor {
            camera: self.camera,
            geometry: self.horizon.geometry,
            options: self.horizon.options,
            sigma: self.sensors.rollpitch_std_deg.to_radians(),
        }
    }
}

#[derive(Serialize)]
struct MetricsRow {
    run: u64,
    mean_xy_m: f64,
    mean_z_m: f64,
    mean_roll_rad: f64,
    mean_pitch_rad: f64,
    mean_yaw_rad: f64,
    mean_vel_mps: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    filter: &'a str,
    mode: &'a str,
    n_runs: usize,
    n_diverged: usize,
    metric: &'a str,
    mean: f64,
    median: f64,
    q1: f64,
    q3: f64,
}

#[derive(Serialize)]
struct TrajectoryRow {
    run: u64,
    t: f64,
    roll_err_rad: f64,
    pitch_err_rad: f64,
    yaw_err_rad: f64,
    orientation_err_rad: f64,
    xy_err_m: f64,
    z_err_m: f64,
    vel_err_mps: f64,
}

#[derive(Serialize)]
struct ConvergenceRow<'a> {
    filter: &'a str,
    mode: &'a str,
    n_runs: usize,
    n_converged: usize,
    n_diverged: usize,
    gated_updates: u64,
    gimbal_lock_updates: u64,
}

/// One row of a replay's estimated-state CSV. The `sd_*` columns are square
/// roots of the covariance diagonal in the filter's own error coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateRow {
    pub t: f64,
    pub roll_rad: f64,
    pub pitch_rad: f64,
    pub yaw_rad: f64,
    pub vx_mps: f64,
    pub vy_mps: f64,
    pub vz_mps: f64,
    pub px_m: f64,
    pub py_m: f64,
    pub pz_m: f64,
    pub sd_rot_x: f64,
    pub sd_rot_y: f64,
    pub sd_rot_z: f64,
    pub sd_vel_x: f64,
    pub sd_vel_y: f64,
    pub sd_vel_z: f64,
    pub sd_pos_x: f64,
    pub sd_pos_y: f64,
    pub sd_pos_z: f64,
}

impl EstimateRow {
    pub fn of(t: f64, est: &Estimator) -> EstimateRow {
        let x = est.pose();
        let (roll, pitch, yaw) = x.r.roll_pitch_yaw();
        let sd: Vec<f64> = est.covariance().diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        EstimateRow {
            t,
            roll_rad: roll,
            pitch_rad: pitch,
            yaw_rad: yaw,
            vx_mps: x.v.x,
            vy_mps: x.v.y,
            vz_mps: x.v.z,
            px_m: x.p.x,
            py_m: x.p.y,
            pz_m: x.p.z,
            sd_rot_x: sd[0],
            sd_rot_y: sd[1],
            sd_rot_z: sd[2],
            sd_vel_x: sd[3],
            sd_vel_y: sd[4],
            sd_vel_z: sd[5],
            sd_pos_x: sd[6],
            sd_pos_y: sd[7],
            sd_pos_z: sd[8],
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(dir)
}

pub fn metrics_file_name(case: &Case) -> String {
    format!("metrics_{}_{}.csv", case.filter.name(), case.mode.name())
}

pub fn trajectory_file_name(case: &Case) -> String {
    format!("trajectory_{}_{}.csv", case.filter.name(), case.mode.name())
}

fn write_metrics(path: &Path, metrics: &[RunMetrics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for m in metrics {
        w.serialize(MetricsRow {
            run: m.run,
            mean_xy_m: m.mean_xy,
            mean_z_m: m.mean_z,
            mean_roll_rad: m.mean_roll,
            mean_pitch_rad: m.mean_pitch,
            mean_yaw_rad: m.mean_yaw,
            mean_vel_mps: m.mean_vel,
            diverged: m.diverged,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn total_skips(metrics: &[RunMetrics]) -> (u64, u64) {
    metrics.iter().fold((0, 0), |(g, l), m| (g + m.skips.gated as u64, l + m.skips.gimbal_lock as u64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: Case,
    pub metrics: Vec<RunMetrics>,
    pub summary: Summary,
}

/// Runs every configured case and writes `metrics_<filter>_<mode>.csv` per case
/// plus `summary.csv`.
pub fn cmd_montecarlo(cfg: &ExperimentConfig) -> Result<Vec<CaseResult>> {
    cfg.validate()?;
    let mc = cfg.montecarlo_config();
    let mut results = Vec::with_capacity(cfg.montecarlo.cases.len());
    for case in &cfg.montecarlo.cases {
        let metrics = run_monte_carlo(&mc, case.filter, case.mode)?;
        let summary = summarize(&metrics)?;
        results.push(CaseResult { case: *case, metrics, summary });
    }
    let dir = prepare_output(cfg)?;
    let mut w = csv_writer(&dir.join("summary.csv"))?;
    for r in &results {
        write_metrics(&dir.join(metrics_file_name(&r.case)), &r.metrics)?;
        for name in METRIC_NAMES {
            let s = r.summary.get(name).expect("summary covers every metric");
            w.serialize(SummaryRow {
                filter: r.case.filter.name(),
                mode: r.case.mode.name(),
                n_runs: r.summary.n_runs,
                n_diverged: r.summary.n_diverged,
                metric: name,
                mean: s.mean,
                median: s.median,
                q1: s.q1,
                q3: s.q3,
            })?;
        }
    }
    w.flush()?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceResult {
    pub case: Case,
    pub metrics: Vec<RunMetrics>,
    pub n_converged: usize,
    pub n_diverged: usize,
}

/// Runs every filter under every mode and writes per-run error trajectories
/// over the first `record_s` seconds, per-run metrics and `convergence_summary.csv`.
pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceResult>> {
    cfg.validate()?;
    let c = &cfg.convergence;
    let mc = cfg.convergence_config();
    let mut results = Vec::new();
    for filter in &c.filters {
        for mode in &c.modes {
            let case = Case { filter: *filter, mode: *mode };
            let metrics = run_monte_carlo(&mc, case.filter, case.mode)?;
            let threshold = c.threshold_deg.to_radians();
            let n_converged = metrics.iter().filter(|m| m.converged(c.window_s, threshold)).count();
            let n_diverged = summarize(&metrics)?.n_diverged;
            results.push(ConvergenceResult { case, metrics, n_converged, n_diverged });
        }
    }
    let dir = prepare_output(cfg)?;
    let mut summary = csv_writer(&dir.join("convergence_summary.csv"))?;
    for r in &results {
        write_metrics(&dir.join(metrics_file_name(&r.case)), &r.metrics)?;
        let mut w = csv_writer(&dir.join(trajectory_file_name(&r.case)))?;
        for m in &r.metrics {
            for s in m.steps.iter().filter(|s| s.t <= c.record_s + 1e-9) {
                let k = s.t * c.record_rate_hz;
                if (k - k.round()).abs() > 1e-6 {
                    continue;
                }
                w.serialize(TrajectoryRow {
                    run: m.run,
                    t: s.t,
                    roll_err_rad: s.roll,
                    pitch_err_rad: s.pitch,
                    yaw_err_rad: s.yaw,
                    orientation_err_rad: s.orientation,
                    xy_err_m: s.xy,
                    z_err_m: s.z,
                    vel_err_mps: s.vel,
                })?;
            }
        }
        w.flush()?;
        let (gated, gimbal) = total_skips(&r.metrics);
        summary.serialize(ConvergenceRow {
            filter: r.case.filter.name(),
            mode: r.case.mode.name(),
            n_runs: r.metrics.len(),
            n_converged: r.n_converged,
            n_diverged: r.n_diverged,
            gated_updates: gated,
            gimbal_lock_updates: gimbal,
        })?;
    }
    summary.flush()?;
    Ok(results)
}

pub fn log_file_name(mode: MeasurementMode, run: u64) -> String {
    format!("log_{}_run{run}.csv", mode.name())
}

/// Writes the sensor log of accuracy-study run `run` under `mode`, with its
/// perturbed starting pose as the `init` row.
pub fn cmd_export_log(cfg: &ExperimentConfig, mode: MeasurementMode, run: u64) -> Result<PathBuf> {
    cfg.validate()?;
    let mc = cfg.montecarlo_config();
    let truth = mc.truth()?;
    let inputs = RunInputs::new(&mc, &truth, mode, run)?;
    let dir = prepare_output(cfg)?;
    let path = dir.join(log_file_name(mode, run));
    write_log(BufWriter::new(File::create(&path)?), Some((inputs.t0, &inputs.x0)), &inputs.stream.events())?;
    Ok(path)
}

/// Runs `est` over `events` and returns its state after every IMU step.
pub fn estimate_rows(est: &mut Estimator, events: &[Event], strategy: UpdateStrategy) -> Result<Vec<EstimateRow>> {
    let mut rows = Vec::new();
    let mut bad_at = None;
    run_events(est, events, strategy, |t, e| {
        if !e.is_finite() {
            bad_at = Some(t);
            return ControlFlow::Break(());
        }
        rows.push(EstimateRow::of(t, e));
        ControlFlow::Continue(())
    })?;
    match bad_at {
        Some(t) => Err(Error::InvalidInput(format!("filter state became non-finite at t = {t}"))),
        None => Ok(rows),
    }
}

/// Starting pose for a log without an `init` row: heading and position from the
/// first moment both a heading and a GPS fix are known, tilt from the latest
/// roll/pitch reading if any (level otherwise), zero velocity. Returns the start
/// time, the pose and the events still to be replayed, led by the last IMU
/// sample at or before the start so the first interval is integrated.
pub fn init_from_fixes(events: &[Event]) -> Result<(f64, ExtendedPose, Vec<Event>)> {
    let (mut imu, mut gps, mut heading, mut rp) = (None, None, None, None);
    for (i, ev) in events.iter().enumerate() {
        match ev {
            Event::Imu(_) => imu = Some(*ev),
            Event::Gps(g) => gps = Some(*g),
            Event::Heading(h) => heading = Some(*h),
            Event::RollPitch(r) => rp = Some(*r),
        }
        if let (Some(g), Some(h)) = (gps, heading) {
            let (phi, theta) = rp.map_or((0.0, 0.0), |r| (r.phi, r.theta));
            let r = rot_z(h.psi) * rot_y(theta) * rot_x(phi);
            let x0 = ExtendedPose::new(r, Vector3::zeros(), g.xyz);
            let rest = imu.into_iter().chain(events[i + 1..].iter().copied()).collect();
            return Ok((ev.t(), x0, rest));
        }
    }
    Err(Error::InvalidInput("log has no init row and never has both a GPS and a heading fix".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub strategy: UpdateStrategy,
    pub from_init_row: bool,
    pub rows: Vec<EstimateRow>,
    pub skips: SkipCounts,
    pub horizon_rejected: usize,
    pub output: PathBuf,
}

/// Replays a sensor log through the configured filter and writes `estimates.csv`.
pub fn cmd_replay(cfg: &ExperimentConfig, log_path: &Path) -> Result<ReplayReport> {
    cfg.validate()?;
    let file = File::open(log_path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", log_path.display())))?;
    let log = read_log_with_horizon(std::io::BufReader::new(file), Some(&cfg.horizon_sensor()))?;
    let strategy = if log.has_roll_pitch() { cfg.replay.strategy.into() } else { UpdateStrategy::NoRollPitch };
    let from_init_row = log.init.is_some();
    let (t0, x0, events) = match log.init {
        Some((t, x)) => (t, x, log.events),
        None => init_from_fixes(&log.events)?,
    };
    let kind = cfg.replay.filter;
    let (x0, cov) = cfg.replay.init.initial_belief(kind, &x0);
    let mut est = Estimator::new(kind, x0, cov, t0, cfg.montecarlo_config().estimator_params());
    let rows = estimate_rows(&mut est, &events, strategy)?;
    let dir = prepare_output(cfg)?;
    let output = dir.join("estimates.csv");
    let mut w = csv_writer(&output)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(ReplayReport { strategy, from_init_row, rows, skips: est.skips, horizon_rejected: log.horizon_rejected, output })
}

#[derive(Debug, Parser)]
#[command(name = "asv-inekf", version, about = "Invariant EKF experiments for surface vessels")]
pub struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the run count of both studies.
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Overrides the worker thread count (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppresses the progress summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accuracy study: per-case metrics and a summary.
    Montecarlo(ExperimentArgs),
    /// Convergence study: error trajectories and convergence counts.
    Convergence(ExperimentArgs),
    /// Runs a filter over a sensor log.
    Replay {
        /// CSV log with t,sensor,values rows
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Writes the simulated sensor log of one accuracy-study run.
    ExportLog {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// partial-30hz, partial-6hz, reconstructed-full-1hz or no-rollpitch
        #[arg(long, default_value = "partial-30hz")]
        mode: MeasurementMode,
        /// Run index; selects the noise streams
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Prints the effective config as TOML.
    PrintConfig(ExperimentArgs),
}

fn load_config(cli: &Cli, exp: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &exp.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides { seed: cli.seed, runs: cli.runs, threads: cli.threads, output_dir: exp.out.clone() });
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    match &cli.command {
        Command::Montecarlo(exp) => {
            let cfg = load_config(cli, exp)?;
            for r in cmd_montecarlo(&cfg)? {
                let get = |n: &str| r.summary.get(n).map_or(f64::NAN, |s| s.mean);
                say(format!(
                    "{:<5} {:<22} runs {:>4} diverged {:>3}  xy {:.3} m  roll {:.5} rad  pitch {:.5} rad  yaw {:.5} rad",
                    r.case.filter.name(),
                    r.case.mode.name(),
                    r.summary.n_runs,
                    r.summary.n_diverged,
                    get("mean_xy_m"),
                    get("mean_roll_rad"),
                    get("mean_pitch_rad"),
                    get("mean_yaw_rad"),
                ));
            }
            say(format!("wrote {}", cfg.output_dir.display()));
        }
        Command::Convergence(exp) => {
            let cfg = load_config(cli, exp)?;
            for r in cmd_convergence(&cfg)? {
                say(format!(
                    "{:<5} {:<22} runs {:>4} converged {:>4} diverged {:>3}",
                    r.case.filter.name(),
                    r.case.mode.name(),
                    r.metrics.len(),
                    r.n_converged,
                    r.n_diverged
                ));
            }
            say(format!("wrote {}", cfg.output_dir.display()));
        }
        Command::Replay { log, exp } => {
            let cfg = load_config(cli, exp)?;
            let r = cmd_replay(&cfg, log)?;
            say(format!(
                "{} steps, strategy {:?}, skipped updates {}, rejected horizon frames {}; wrote {}",
                r.rows.len(),
                r.strategy,
                r.skips.total(),
                r.horizon_rejected,
                r.output.display()
            ));
        }
        Command::ExportLog { exp, mode, run } => {
            let cfg = load_config(cli, exp)?;
            let path = cmd_export_log(&cfg, *mode, *run)?;
            say(format!("wrote {}", path.display()));
        }
        Command::PrintConfig(exp) => {
            let cfg = load_config(cli, exp)?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
