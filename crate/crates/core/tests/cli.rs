use std::fs;
use std::path::Path;

use asv_inekf::cli::*;
use asv_inekf::estimator::FilterKind;
use asv_inekf::horizon::HorizonOptions;
use asv_inekf::sim::{project_horizon_segment, write_log, MeasurementMode, RunInputs, UpdateStrategy};

fn quick(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.montecarlo.n_runs = 4;
    cfg.montecarlo.duration_s = 3.0;
    cfg.convergence.n_runs = 3;
    cfg.convergence.duration_s = 2.0;
    cfg
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn montecarlo_writes_one_csv_per_case_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let results = cmd_montecarlo(&cfg).unwrap();
    assert_eq!(results.len(), 3);
    assert_eq!(
        files(tmp.path()),
        vec![
            "config.toml",
            "metrics_inekf_partial-30hz.csv",
            "metrics_inekf_reconstructed-full-1hz.csv",
            "metrics_mekf_partial-30hz.csv",
            "summary.csv",
        ]
    );
    let metrics = read(tmp.path(), "metrics_inekf_partial-30hz.csv");
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run,mean_xy_m,mean_z_m,mean_roll_rad,mean_pitch_rad,mean_yaw_rad,mean_vel_mps,diverged"
    );
    assert_eq!(lines.count(), 4);
    assert_eq!(read(tmp.path(), "summary.csv").lines().count(), 1 + 3 * 6);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = quick(a.path());
    cfg.threads = 1;
    cmd_montecarlo(&cfg).unwrap();
    cmd_convergence(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    cfg.threads = 3;
    cmd_montecarlo(&cfg).unwrap();
    cmd_convergence(&cfg).unwrap();
    let names = files(a.path());
    assert_eq!(names, files(b.path()));
    for name in names.iter().filter(|n| n.ends_with(".csv")) {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn effective_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quick(tmp.path());
    cfg.montecarlo.cases.truncate(1);
    cmd_montecarlo(&cfg).unwrap();
    let reread = ExperimentConfig::load(&tmp.path().join("config.toml")).unwrap();
    assert_eq!(reread, cfg);
    let first = read(tmp.path(), "metrics_inekf_partial-30hz.csv");
    cmd_montecarlo(&reread).unwrap();
    assert_eq!(read(tmp.path(), "metrics_inekf_partial-30hz.csv"), first);
}

#[test]
fn convergence_writes_trajectories_and_consistent_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quick(tmp.path());
    cfg.convergence.duration_s = 1.0;
    let results = cmd_convergence(&cfg).unwrap();
    assert_eq!(results.len(), 4);
    let traj = read(tmp.path(), "trajectory_mekf_no-rollpitch.csv");
    // 3 runs at 10 Hz over [0, 1] s
    assert_eq!(traj.lines().count(), 1 + 3 * 11);
    let summary = read(tmp.path(), "convergence_summary.csv");
    assert_eq!(summary.lines().count(), 5);
    for r in &results {
        let diverged_in_metrics = read(tmp.path(), &metrics_file_name(&r.case)).lines().filter(|l| l.ends_with(",true")).count();
        assert_eq!(r.n_diverged, diverged_in_metrics);
    }
}

#[test]
fn replay_of_exported_log_matches_the_in_process_run() {
    for (filter, mode) in [
        (FilterKind::Inekf, MeasurementMode::Partial30Hz),
        (FilterKind::Mekf, MeasurementMode::ReconstructedFull1Hz),
        (FilterKind::Inekf, MeasurementMode::NoRollPitch),
    ] {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = quick(tmp.path());
        cfg.replay.filter = filter;
        cfg.replay.init = cfg.montecarlo.init;
        cfg.replay.strategy = match mode.strategy() {
            UpdateStrategy::ReconstructedFull => ReplayStrategy::ReconstructedFull,
            _ => ReplayStrategy::Partial,
        };
        let log = cmd_export_log(&cfg, mode, 2).unwrap();
        let report = cmd_replay(&cfg, &log).unwrap();
        assert!(report.from_init_row);
        assert_eq!(report.strategy, mode.strategy());

        let mc = cfg.montecarlo_config();
        let truth = mc.truth().unwrap();
        let inputs = RunInputs::new(&mc, &truth, mode, 2).unwrap();
        let mut est = inputs.estimator(&mc, filter);
        let direct = estimate_rows(&mut est, &inputs.stream.events(), mode.strategy()).unwrap();
        assert_eq!(report.rows, direct);

        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &direct {
            w.serialize(r).unwrap();
        }
        assert_eq!(fs::read(&report.output).unwrap(), w.into_inner().unwrap());
    }
}

#[test]
fn replay_without_init_or_rollpitch_starts_from_fixes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let mc = cfg.montecarlo_config();
    let truth = mc.truth().unwrap();
    let inputs = RunInputs::new(&mc, &truth, MeasurementMode::NoRollPitch, 0).unwrap();
    let path = tmp.path().join("gps_heading.csv");
    write_log(fs::File::create(&path).unwrap(), None, &inputs.stream.events()).unwrap();
    let report = cmd_replay(&cfg, &path).unwrap();
    assert!(!report.from_init_row);
    assert_eq!(report.strategy, UpdateStrategy::NoRollPitch);
    // first GPS and heading arrive at t = 1 s
    assert_eq!(report.rows[0].t, 1.0);
    let last = report.rows.last().unwrap();
    let end = truth.iter().find(|s| (s.t - last.t).abs() < 1e-9).unwrap();
    assert!(((last.px_m - end.pose.p.x).powi(2) + (last.py_m - end.pose.p.y).powi(2)).sqrt() < 10.0);
}

#[test]
fn replay_converts_horizon_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let mc = cfg.montecarlo_config();
    let truth = mc.truth().unwrap();
    let inputs = RunInputs::new(&mc, &truth, MeasurementMode::NoRollPitch, 0).unwrap();
    let path = tmp.path().join("horizon.csv");
    write_log(fs::File::create(&path).unwrap(), Some((inputs.t0, &inputs.x0)), &inputs.stream.events()).unwrap();
    let mut text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // one horizon frame per 10 IMU steps, inserted after that step's IMU row
    let mut out = vec![lines.remove(0), lines.remove(0)];
    let opts = HorizonOptions::default();
    for line in lines {
        let t: f64 = line.split(',').next().unwrap().parse().unwrap();
        let is_imu = line.contains(",imu,");
        out.push(line);
        let k = (t * 100.0).round() as usize;
        if is_imu && k.is_multiple_of(10) && k > 0 {
            let seg = project_horizon_segment(&truth[k].pose, &cfg.camera, &cfg.horizon.geometry, opts.mount_pitch).unwrap();
            out.push(format!("{t},horizon,{},{},{},{}", seg.p0.x, seg.p0.y, seg.p1.x, seg.p1.y));
        }
    }
    out.push(format!("{},horizon,1,1,1,1", truth.last().unwrap().t));
    text = out.join("\n");
    fs::write(&path, text).unwrap();
    let report = cmd_replay(&cfg, &path).unwrap();
    assert_eq!(report.strategy, UpdateStrategy::Partial);
    assert_eq!(report.horizon_rejected, 1);
    let last = report.rows.last().unwrap();
    let (r, p, _) = truth.last().unwrap().pose.r.roll_pitch_yaw();
    assert!((last.roll_rad - r).abs() < 2f64.to_radians());
    assert!((last.pitch_rad - p).abs() < 2f64.to_radians());
}

#[test]
fn replay_rejects_empty_and_malformed_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "t,sensor,values\n").unwrap();
    assert!(cmd_replay(&cfg, &empty).is_err());
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "t,sensor,values\n0,imu,0,0,0,0,0,9.81\n0.01,gps,1,2\n").unwrap();
    let err = cmd_replay(&cfg, &bad).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn binary_entry_reports_errors_through_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("c.toml");
    fs::write(&cfg_path, "[montecarlo]\nn_runs = 0\n").unwrap();
    let out = tmp.path().join("out");
    let args = |sub: &str| {
        vec!["asv-inekf".to_string(), "--quiet".into(), sub.into(), "--config".into(), cfg_path.display().to_string(), "--out".into(), out.display().to_string()]
    };
    assert_ne!(run_cli(args("montecarlo")), 0);
    fs::write(&cfg_path, "[montecarlo]\nn_runs = 2\nduration_s = 1.0\nbogus = 1\n").unwrap();
    assert_ne!(run_cli(args("montecarlo")), 0);
    fs::write(&cfg_path, "[montecarlo]\nn_runs = 2\nduration_s = 1.0\n").unwrap();
    assert_eq!(run_cli(args("montecarlo")), 0);
    assert!(out.join("summary.csv").exists());
    assert_ne!(run_cli(["asv-inekf", "no-such-command"]), 0);
}

#[test]
fn every_output_lands_in_the_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested/out");
    let mut cfg = quick(&out);
    cfg.montecarlo.cases.truncate(1);
    let log = cmd_export_log(&cfg, MeasurementMode::Partial30Hz, 0).unwrap();
    cmd_replay(&cfg, &log).unwrap();
    cmd_montecarlo(&cfg).unwrap();
    assert_eq!(files(tmp.path()), vec!["nested"]);
    assert_eq!(
        files(&out),
        vec!["config.toml", "estimates.csv", "log_partial-30hz_run0.csv", "metrics_inekf_partial-30hz.csv", "summary.csv"]
    );
}
