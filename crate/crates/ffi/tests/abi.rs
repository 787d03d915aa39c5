use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use swarmloc::geometry::{relative4, wrap_angle};
use swarmloc::simworld::{simulate, GroundTruth, LogRecord, Scenario};
use swarmloc_ffi::*;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut len = 0usize;
    let mut buf = vec![0 as c_char; 512];
    unsafe { sw_last_error(buf.as_mut_ptr(), buf.len(), &mut len) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn new_estimator(id: u32) -> *mut SwEstimator {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sw_estimator_new(id, 0, &mut h) }, SwStatus::Ok);
    assert!(!h.is_null());
    h
}

/// Moves every queued message of `from` into `to`.
fn relay(from: *mut SwEstimator, to: *mut SwEstimator) -> usize {
    let mut n = 0;
    let mut buf = vec![0 as c_char; 256];
    loop {
        let mut len = 0usize;
        match unsafe { sw_estimator_pop_message(from, buf.as_mut_ptr(), buf.len(), &mut len) } {
            SwStatus::Ok => {
                assert_eq!(unsafe { sw_estimator_push_message(to, buf.as_ptr()) }, SwStatus::Ok, "{}", last_error());
                n += 1;
            }
            SwStatus::BufferTooSmall => buf.resize(len + 1, 0),
            SwStatus::NotAvailable => return n,
            s => panic!("pop failed: {s:?} {}", last_error()),
        }
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    assert_eq!(unsafe { sw_estimator_new(1, 0, ptr::null_mut()) }, SwStatus::NullPointer);
    assert_eq!(unsafe { sw_estimator_advance(ptr::null_mut(), 0.0) }, SwStatus::NullPointer);
    assert!(last_error().contains("null"));
    unsafe { sw_estimator_free(ptr::null_mut()) };
    unsafe { sw_run_free(ptr::null_mut()) };

    let h = new_estimator(1);
    let nan = SwPose4 { x: f64::NAN, ..SwPose4::default() };
    assert_eq!(unsafe { sw_estimator_push_vio(h, 0.0, nan, 0.0, 0.0) }, SwStatus::InvalidArgument);
    assert_eq!(unsafe { sw_estimator_push_distance(h, 2, 0.0, -1.0) }, SwStatus::InvalidArgument);
    let bad = CString::new("{\"kind\":\"nope\"}").unwrap();
    assert_eq!(unsafe { sw_estimator_push_message(h, bad.as_ptr()) }, SwStatus::InvalidArgument);
    assert!(last_error().starts_with("bad message"));
    let dir = [0.0, 0.0, 2.0];
    let rot = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let pos = [0.0; 3];
    let s = unsafe { sw_estimator_push_detection(h, 0.0, 2, dir.as_ptr(), 0.5, rot.as_ptr(), pos.as_ptr()) };
    assert_eq!(s, SwStatus::InvalidArgument);
    let mut e = std::mem::MaybeUninit::<SwEstimate>::uninit();
    assert_eq!(unsafe { sw_estimator_estimate(h, 1, 0.0, e.as_mut_ptr()) }, SwStatus::NotAvailable);
    let mut buf = [0 as c_char; 4];
    let mut len = 0;
    assert_eq!(unsafe { sw_estimator_pop_message(h, buf.as_mut_ptr(), 4, &mut len) }, SwStatus::NotAvailable);
    unsafe { sw_estimator_free(h) };

    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { sw_run_scenario(missing.as_ptr(), -1, ptr::null(), &mut run) }, SwStatus::Config);
    assert!(run.is_null());
}

#[test]
fn two_estimators_exchange_messages_through_the_c_api() {
    let sc = Scenario::load(&scenario_path("reference")).unwrap();
    let mut sc = sc;
    sc.duration = 15.0;
    let log = simulate(&sc).unwrap();
    let truth = GroundTruth::from_log(&log);
    let h = [new_estimator(1), new_estimator(2)];
    let idx = |d: u32| (d - 1) as usize;

    let mut last_t = 0.0;
    for rec in &log.records {
        let t = rec.t();
        if t > last_t {
            for &e in &h {
                assert_eq!(unsafe { sw_estimator_advance(e, last_t) }, SwStatus::Ok);
            }
            relay(h[0], h[1]);
            relay(h[1], h[0]);
            last_t = t;
        }
        let s = match rec {
            LogRecord::Vio { ids, payload, .. } => {
                let p = payload.pose4;
                let (roll, pitch) = {
                    let m = payload.pose6.rotation.matrix();
                    ((m[(2, 1)]).atan2(m[(2, 2)]), (-m[(2, 0)]).asin())
                };
                let pose = SwPose4 { x: p.x, y: p.y, z: p.z, yaw: p.yaw };
                unsafe { sw_estimator_push_vio(h[idx(ids[0])], t, pose, roll, pitch) }
            }
            LogRecord::Uwb { ids, payload, .. } => unsafe {
                sw_estimator_push_distance(h[idx(ids[0])], ids[1], t, payload.d)
            },
            LogRecord::Detection { ids, payload, .. } => {
                let o = payload.to_observation(ids[0], t);
                let rot: Vec<f64> = (0..9).map(|i| o.cam_rot.matrix()[(i / 3, i % 3)]).collect();
                let label = o.label.map_or(-1, i64::from);
                unsafe {
                    sw_estimator_push_detection(
                        h[idx(ids[0])],
                        t,
                        label,
                        o.dir.as_ptr(),
                        o.inv_depth,
                        rot.as_ptr(),
                        o.cam_pos.as_ptr(),
                    )
                }
            }
            _ => SwStatus::Ok,
        };
        assert_eq!(s, SwStatus::Ok, "{}", last_error());
    }

    for (k, &e) in h.iter().enumerate() {
        let mut init = 0;
        assert_eq!(unsafe { sw_estimator_initialized(e, &mut init) }, SwStatus::Ok);
        assert_eq!(init, 1, "drone {} not initialized", k + 1);
    }
    let mut own = std::mem::MaybeUninit::<SwEstimate>::uninit();
    let mut other = std::mem::MaybeUninit::<SwEstimate>::uninit();
    unsafe {
        assert_eq!(sw_estimator_estimate(h[0], 1, last_t, own.as_mut_ptr()), SwStatus::Ok);
        assert_eq!(sw_estimator_estimate(h[0], 2, last_t, other.as_mut_ptr()), SwStatus::Ok);
    }
    let (own, other) = unsafe { (own.assume_init(), other.assume_init()) };
    assert_eq!(own.status, SwEstimateStatus::Propagated);
    let p = |s: SwPose4| swarmloc::geometry::Pose4::new(s.x, s.y, s.z, s.yaw);
    let est = relative4(&p(own.pose), &p(other.pose));
    let gt = relative4(&truth.pose4_at(1, own.t).unwrap(), &truth.pose4_at(2, other.t).unwrap());
    assert!((est.translation() - gt.translation()).norm() < 0.3, "{est:?} vs {gt:?}");
    assert!(wrap_angle(est.yaw - gt.yaw).abs() < 0.1);
    for e in h {
        unsafe { sw_estimator_free(e) };
    }
}

#[test]
fn scenario_run_matches_the_rust_api() {
    let path = scenario_path("zero_noise");
    let dir = tempfile::tempdir().unwrap();
    let mut run = ptr::null_mut();
    let s = unsafe { sw_run_scenario(cstr(&path).as_ptr(), -1, cstr(dir.path()).as_ptr(), &mut run) };
    assert_eq!(s, SwStatus::Ok, "{}", last_error());
    let mut summary = SwSummary::default();
    assert_eq!(unsafe { sw_run_summary(run, &mut summary) }, SwStatus::Ok);
    assert!(summary.all_initialized && summary.all_converged && !summary.any_diverged);
    assert!(summary.re_pos < 1e-6);

    let mut len = 0usize;
    assert_eq!(unsafe { sw_run_report_json(run, ptr::null_mut(), 0, &mut len) }, SwStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; len + 1];
    assert_eq!(unsafe { sw_run_report_json(run, buf.as_mut_ptr(), buf.len(), &mut len) }, SwStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(json, std::fs::read_to_string(dir.path().join("metrics.json")).unwrap());

    let sc = Scenario::load(&path).unwrap();
    let direct = swarmloc::eval::run_scenario(&sc, &Default::default()).unwrap();
    assert_eq!(json, direct.report.to_json());
    unsafe { sw_run_free(run) };
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/swarmloc.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "sw_version",
        "sw_last_error",
        "sw_estimator_new",
        "sw_estimator_free",
        "sw_estimator_push_vio",
        "sw_estimator_push_distance",
        "sw_estimator_push_detection",
        "sw_estimator_push_message",
        "sw_estimator_pop_message",
        "sw_estimator_advance",
        "sw_estimator_estimate",
        "sw_run_scenario",
        "sw_run_summary",
        "sw_run_report_json",
        "sw_run_free",
        "typedef struct SwEstimator SwEstimator",
        "SW_STATUS_BUFFER_TOO_SMALL = 7",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
