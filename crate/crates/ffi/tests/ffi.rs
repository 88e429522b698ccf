use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use asv_inekf::estimator::{Estimator, EstimatorParams, FilterKind};
use asv_inekf::horizon::{CameraIntrinsics, HorizonGeometry, HorizonOptions};
use asv_inekf::inekf::ImuSample;
use asv_inekf::liegroup::{ExtendedPose, Matrix9, Rotation};
use asv_inekf::measurements::{GpsReading, RollPitchReading};
use asv_inekf::sim::project_horizon_segment;
use asv_inekf_ffi::*;
use nalgebra::{Matrix3, Vector3};

const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

fn pose() -> AsvPose {
    AsvPose { r: IDENTITY, v: [2.0, 0.0, 0.0], p: [0.0, 0.0, 0.0] }
}

fn covariance(kind: AsvFilterKind, x0: &AsvPose) -> [f64; 81] {
    let mut cov = [0.0; 81];
    let s = [0.3; 3];
    let st = unsafe { asv_initial_covariance(kind, x0, 0.035, s.as_ptr(), s.as_ptr(), cov.as_mut_ptr()) };
    assert_eq!(st, AsvStatus::Ok);
    cov
}

fn new(kind: AsvFilterKind) -> *mut AsvEstimator {
    let x0 = pose();
    let cov = covariance(kind, &x0);
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { asv_estimator_new(kind, &x0, cov.as_ptr(), 0.0, ptr::null(), &mut est) }, AsvStatus::Ok);
    assert!(!est.is_null());
    est
}

#[test]
fn handle_matches_the_library_bit_for_bit() {
    for (kind, core_kind) in [(AsvFilterKind::Inekf, FilterKind::Inekf), (AsvFilterKind::Mekf, FilterKind::Mekf)] {
        let est = new(kind);
        let x0 = pose();
        let cov = covariance(kind, &x0);
        let mut reference = Estimator::new(
            core_kind,
            ExtendedPose::new(Rotation::identity(), Vector3::from(x0.v), Vector3::zeros()),
            Matrix9::from_row_slice(&cov),
            0.0,
            EstimatorParams::default(),
        );
        let (gyro, accel) = ([0.01, -0.02, 0.05], [0.1, 0.0, 9.8]);
        let mut applied = -1;
        for k in 1..=200 {
            let t = k as f64 * 0.01;
            unsafe {
                assert_eq!(asv_estimator_predict(est, gyro.as_ptr(), accel.as_ptr(), 0.01), AsvStatus::Ok);
            }
            reference.predict(&ImuSample { t: t - 0.01, gyro: gyro.into(), accel: accel.into() }, 0.01).unwrap();
            if k % 5 == 0 {
                let rp = AsvRollPitch { t, phi: 0.01, theta: -0.02, sigma_phi: 0.01, sigma_theta: 0.01 };
                unsafe { assert_eq!(asv_estimator_update_roll_pitch(est, rp, &mut applied), AsvStatus::Ok) };
                assert_eq!(applied, 1);
                reference
                    .update_roll_pitch(&RollPitchReading { phi: 0.01, theta: -0.02, sigma_phi: 0.01, sigma_theta: 0.01, t })
                    .unwrap();
            }
            if k % 100 == 0 {
                let fix = [2.0 * t, 0.1, 0.0];
                unsafe { assert_eq!(asv_estimator_update_gps(est, t, fix.as_ptr(), 0.5, 1.0, &mut applied), AsvStatus::Ok) };
                reference.update_gps(&GpsReading { xyz: fix.into(), sigma_xy: 0.5, sigma_z: 1.0, t }).unwrap();
                unsafe { assert_eq!(asv_estimator_update_heading(est, t, 0.1, 0.02, ptr::null_mut()), AsvStatus::Ok) };
                reference
                    .update_heading(&asv_inekf::measurements::HeadingReading { psi: 0.1, sigma_psi: 0.02, t })
                    .unwrap();
            }
        }
        let (mut x, mut t) = (AsvPose::default(), 0.0);
        let mut cov = [0.0; 81];
        unsafe {
            assert_eq!(asv_estimator_get_state(est, &mut x, &mut t), AsvStatus::Ok);
            assert_eq!(asv_estimator_get_covariance(est, cov.as_mut_ptr()), AsvStatus::Ok);
        }
        let p = reference.pose();
        assert_eq!(t, reference.time());
        assert_eq!(Matrix3::from_row_slice(&x.r), *p.r.matrix());
        assert_eq!(Vector3::from(x.v), p.v);
        assert_eq!(Vector3::from(x.p), p.p);
        assert_eq!(Matrix9::from_row_slice(&cov), reference.covariance());
        unsafe { asv_estimator_free(est) };
    }
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let est = new(AsvFilterKind::Inekf);
    let z = [0.0; 3];
    unsafe {
        assert_eq!(asv_estimator_predict(ptr::null_mut(), z.as_ptr(), z.as_ptr(), 0.01), AsvStatus::NullPointer);
        assert_eq!(asv_estimator_predict(est, ptr::null(), z.as_ptr(), 0.01), AsvStatus::NullPointer);
        assert_eq!(asv_estimator_predict(est, z.as_ptr(), z.as_ptr(), 0.5), AsvStatus::InvalidInput);
        assert_eq!(asv_estimator_predict(est, z.as_ptr(), z.as_ptr(), f64::NAN), AsvStatus::InvalidInput);
        let nan = [f64::NAN, 0.0, 0.0];
        assert_ne!(asv_estimator_predict(est, nan.as_ptr(), z.as_ptr(), 0.01), AsvStatus::Ok);
        assert_eq!(asv_estimator_get_state(est, ptr::null_mut(), ptr::null_mut()), AsvStatus::NullPointer);
        assert_eq!(asv_estimator_get_covariance(est, ptr::null_mut()), AsvStatus::NullPointer);
        let mut skips = AsvSkipCounts::default();
        assert_eq!(asv_estimator_skips(ptr::null(), &mut skips), AsvStatus::NullPointer);
        asv_estimator_free(est);
        asv_estimator_free(ptr::null_mut());
    }
}

#[test]
fn construction_rejects_bad_inputs() {
    let x0 = pose();
    let cov = covariance(AsvFilterKind::Inekf, &x0);
    let mut est = std::ptr::dangling_mut::<AsvEstimator>();
    unsafe {
        let mut skew = x0;
        skew.r[1] = 0.5;
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &skew, cov.as_ptr(), 0.0, ptr::null(), &mut est), AsvStatus::InvalidInput);
        assert!(est.is_null());
        let mut neg = cov;
        neg[0] = -1.0;
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &x0, neg.as_ptr(), 0.0, ptr::null(), &mut est), AsvStatus::InvalidInput);
        let mut asym = cov;
        asym[1] = 1e-3;
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &x0, asym.as_ptr(), 0.0, ptr::null(), &mut est), AsvStatus::InvalidInput);
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &x0, ptr::null(), 0.0, ptr::null(), &mut est), AsvStatus::NullPointer);
        let mut params = AsvParams { gyro_std: 0.0, accel_std: 0.0, imu_rate_hz: 0.0, position_random_walk: 0.0, gate_rad: 0.0 };
        assert_eq!(asv_params_default(&mut params), AsvStatus::Ok);
        params.imu_rate_hz = -1.0;
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &x0, cov.as_ptr(), 0.0, &params, &mut est), AsvStatus::InvalidInput);
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &x0, cov.as_ptr(), 0.0, ptr::null(), ptr::null_mut()), AsvStatus::NullPointer);
    }
}

#[test]
fn gated_updates_report_not_applied() {
    let x0 = pose();
    let cov = covariance(AsvFilterKind::Inekf, &x0);
    let mut params = AsvParams { gyro_std: 0.0, accel_std: 0.0, imu_rate_hz: 0.0, position_random_walk: 0.0, gate_rad: 0.0 };
    let mut est = ptr::null_mut();
    let mut applied = -1;
    let mut skips = AsvSkipCounts::default();
    unsafe {
        asv_params_default(&mut params);
        params.gate_rad = 0.1;
        assert_eq!(asv_estimator_new(AsvFilterKind::Inekf, &x0, cov.as_ptr(), 0.0, &params, &mut est), AsvStatus::Ok);
        assert_eq!(asv_estimator_update_heading(est, 0.0, 1.0, 0.01, &mut applied), AsvStatus::Ok);
        assert_eq!(applied, 0);
        assert_eq!(asv_estimator_update_heading(est, 0.0, 0.05, 0.01, &mut applied), AsvStatus::Ok);
        assert_eq!(applied, 1);
        assert_eq!(asv_estimator_skips(est, &mut skips), AsvStatus::Ok);
        asv_estimator_free(est);
    }
    assert_eq!(skips, AsvSkipCounts { gated: 1, gimbal_lock: 0, unobservable: 0 });
}

#[test]
fn horizon_reading_matches_the_projected_attitude() {
    let cam = CameraIntrinsics::default();
    let geom = HorizonGeometry::default();
    let opts = HorizonOptions::default();
    let r = Rotation::from_roll_pitch_yaw(0.05, -0.03, 1.2);
    let truth = ExtendedPose::new(r, Vector3::zeros(), Vector3::zeros());
    let s = project_horizon_segment(&truth, &cam, &geom, opts.mount_pitch).unwrap();
    let segs = [AsvSegment { x0: s.p0.x, y0: s.p0.y, x1: s.p1.x, y1: s.p1.y }];
    let c = AsvCamera { f_x: cam.f_x, f_y: cam.f_y, c_x: cam.c_x, c_y: cam.c_y, width: cam.width, height: cam.height };
    let g = AsvHorizonGeometry { camera_height_v: geom.camera_height_v, earth_radius_re: geom.earth_radius_re };
    let mut out = AsvRollPitch::default();
    let st = unsafe {
        asv_horizon_to_reading(segs.as_ptr(), 1, &c, &g, opts.vertical_cutoff_deg, opts.mount_pitch, 0.01, 3.0, &mut out)
    };
    assert_eq!(st, AsvStatus::Ok);
    assert!((out.phi - 0.05).abs() < 1e-3 && (out.theta + 0.03).abs() < 1e-3, "{out:?}");
    assert_eq!((out.t, out.sigma_phi), (3.0, 0.01));
    let st = unsafe { asv_horizon_to_reading(ptr::null(), 0, &c, &g, 45.0, 0.0, 0.01, 3.0, &mut out) };
    assert_eq!(st, AsvStatus::NoHorizon);
    let degenerate = [AsvSegment { x0: 5.0, y0: 5.0, x1: 5.0, y1: 5.0 }];
    let st = unsafe { asv_horizon_to_reading(degenerate.as_ptr(), 1, &c, &g, 45.0, 0.0, 0.01, 3.0, &mut out) };
    assert_ne!(st, AsvStatus::Ok);
}

#[test]
fn every_status_has_a_message() {
    for s in [
        AsvStatus::Ok,
        AsvStatus::NullPointer,
        AsvStatus::InvalidInput,
        AsvStatus::NonFinite,
        AsvStatus::BranchAmbiguity,
        AsvStatus::GimbalLock,
        AsvStatus::Unobservable,
        AsvStatus::Gated,
        AsvStatus::NoHorizon,
        AsvStatus::HorizonOutOfFrame,
        AsvStatus::DegenerateSegment,
        AsvStatus::Internal,
        AsvStatus::Panic,
    ] {
        let msg = unsafe { CStr::from_ptr(asv_status_message(s)) };
        assert!(!msg.to_bytes().is_empty());
    }
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/asv_inekf.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let mut build = Command::new(cargo);
    build.args(["build", "-p", "asv-inekf-ffi", "--lib"]).current_dir(&dir);
    if profile_dir.file_name().unwrap() == "release" {
        build.arg("--release");
    }
    assert!(build.status().unwrap().success());
    let lib = profile_dir.join("libasv_inekf_ffi.a");
    assert!(lib.exists(), "{}", lib.display());

    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new(&cc)
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1.000 1.000 1");
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}
