//! C ABI over the swarmloc estimator and scenario runner.
//!
//! Handles are opaque and owned by the caller once created; each has a
//! matching `*_free`. Every function returns an [`SwStatus`]. On failure a
//! message is kept per thread and can be read with [`sw_last_error`].
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use swarmloc::estimator::{
    EstimateStatus, Estimator, EstimatorConfig, Event, InitState, Message,
};
use swarmloc::eval::{run_scenario, write_outputs, RunOptions, RunResult};
use swarmloc::geometry::{Pose4, Pose6, Rot3};
use swarmloc::measurements::{DetectionObservation, DistanceEdge};
use swarmloc::simworld::Scenario;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Io = 4,
    Config = 5,
    /// No estimate, message or value is available yet.
    NotAvailable = 6,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 7,
    Diverged = 8,
    Panic = 99,
}

/// 4-DoF pose: position in meters and yaw in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SwPose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl From<Pose4> for SwPose4 {
    fn from(p: Pose4) -> Self {
        SwPose4 { x: p.x, y: p.y, z: p.z, yaw: p.yaw }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwEstimateStatus {
    Odometry = 0,
    Propagated = 1,
    Stale = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwEstimate {
    /// Time of the VIO sample the estimate was propagated with.
    pub t: f64,
    pub pose: SwPose4,
    /// Row-major attitude with roll and pitch taken from VIO.
    pub rotation: [f64; 9],
    pub status: SwEstimateStatus,
}

/// Headline metrics of a scenario run. Unavailable values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SwSummary {
    pub all_initialized: bool,
    pub all_converged: bool,
    pub any_diverged: bool,
    pub re_pos: f64,
    pub vio_re_pos: f64,
    pub ate_pos: f64,
    pub drift: f64,
    pub vio_drift: f64,
}

/// One drone's estimator plus the messages it wants broadcast.
pub struct SwEstimator {
    inner: Estimator,
    cfg: EstimatorConfig,
    outbox: VecDeque<Message>,
}

/// A finished scenario run.
pub struct SwRun {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: SwStatus, msg: impl Into<String>) -> SwStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SwStatus) -> SwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SwStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SwStatus> {
    if p.is_null() {
        return Err(fail(SwStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SwStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Copies `bytes` plus a NUL into `buf`. `len` receives the length without
/// the NUL either way.
unsafe fn write_out(bytes: &[u8], buf: *mut c_char, cap: usize, len: *mut usize) -> SwStatus {
    if !len.is_null() {
        *len = bytes.len();
    }
    if buf.is_null() || cap < bytes.len() + 1 {
        return SwStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    SwStatus::Ok
}

fn finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null; `len` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn sw_last_error(buf: *mut c_char, cap: usize, len: *mut usize) -> SwStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    write_out(msg.as_bytes(), buf, cap, len)
}

/// Creates an estimator for drone `id` with default parameters. `seed` must
/// be the same on every drone of a swarm.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_new(id: u32, seed: u64, out: *mut *mut SwEstimator) -> SwStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwStatus::NullPointer, "out is null");
        }
        let cfg = EstimatorConfig { seed, ..EstimatorConfig::default() };
        let h = SwEstimator { inner: Estimator::new(id, cfg.clone(), None), cfg, outbox: VecDeque::new() };
        *out = Box::into_raw(Box::new(h));
        SwStatus::Ok
    })
}

/// Creates an estimator from the `[estimator]` table of a scenario file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_from_scenario(
    id: u32,
    config_path: *const c_char,
    out: *mut *mut SwEstimator,
) -> SwStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwStatus::NullPointer, "out is null");
        }
        let path = match str_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let sc = match Scenario::load(Path::new(path)) {
            Ok(sc) => sc,
            Err(e) => return fail(SwStatus::Config, e.to_string()),
        };
        let cfg = sc.estimator;
        let h = SwEstimator { inner: Estimator::new(id, cfg.clone(), None), cfg, outbox: VecDeque::new() };
        *out = Box::into_raw(Box::new(h));
        SwStatus::Ok
    })
}

/// # Safety
/// `h` must come from an `sw_estimator_*` constructor and not be used after.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_free(h: *mut SwEstimator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

unsafe fn with_estimator(h: *mut SwEstimator, f: impl FnOnce(&mut SwEstimator) -> SwStatus) -> SwStatus {
    guard(|| match h.as_mut() {
        Some(h) => f(h),
        None => fail(SwStatus::NullPointer, "estimator handle is null"),
    })
}

fn ingest(h: &mut SwEstimator, event: Event) -> SwStatus {
    let out = h.inner.ingest(event);
    h.outbox.extend(out);
    SwStatus::Ok
}

/// Feeds one own VIO sample: position, yaw, and the roll and pitch of the
/// VIO attitude.
///
/// # Safety
/// `h` must be a live estimator handle.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_push_vio(
    h: *mut SwEstimator,
    t: f64,
    pose: SwPose4,
    roll: f64,
    pitch: f64,
) -> SwStatus {
    with_estimator(h, |h| {
        if !finite(&[t, pose.x, pose.y, pose.z, pose.yaw, roll, pitch]) {
            return fail(SwStatus::InvalidArgument, "non-finite VIO sample");
        }
        let pose4 = Pose4::new(pose.x, pose.y, pose.z, pose.yaw);
        let pose6 = Pose6::new(Rot3::from_euler(roll, pitch, pose.yaw), pose4.translation());
        ingest(h, Event::Vio { t, pose4, pose6 })
    })
}

/// Feeds one own UWB range to drone `other`, meters.
///
/// # Safety
/// `h` must be a live estimator handle.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_push_distance(h: *mut SwEstimator, other: u32, t: f64, d: f64) -> SwStatus {
    with_estimator(h, |h| {
        if !finite(&[t, d]) || d < 0.0 {
            return fail(SwStatus::InvalidArgument, "distance must be finite and non-negative");
        }
        let e = DistanceEdge { i: h.inner.id(), j: other, t, d, sigma: h.cfg.sigmas.distance };
        ingest(h, Event::Distance(e))
    })
}

/// Feeds one own detection of another drone. `dir` is the unit bearing in
/// the yaw-only body frame, `cam_rot` the row-major camera attitude and
/// `cam_pos` the camera offset. `label` is the detected drone when known,
/// negative otherwise.
///
/// # Safety
/// `h` must be a live estimator handle; the arrays must hold 3, 9 and 3
/// values.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_push_detection(
    h: *mut SwEstimator,
    t: f64,
    label: i64,
    dir: *const f64,
    inv_depth: f64,
    cam_rot: *const f64,
    cam_pos: *const f64,
) -> SwStatus {
    with_estimator(h, |h| {
        if dir.is_null() || cam_rot.is_null() || cam_pos.is_null() {
            return fail(SwStatus::NullPointer, "detection array is null");
        }
        let d = std::slice::from_raw_parts(dir, 3);
        let r = std::slice::from_raw_parts(cam_rot, 9);
        let p = std::slice::from_raw_parts(cam_pos, 3);
        if !(finite(d) && finite(r) && finite(p) && t.is_finite() && inv_depth > 0.0 && inv_depth.is_finite()) {
            return fail(SwStatus::InvalidArgument, "detection values must be finite with positive inverse depth");
        }
        let dir = nalgebra::Vector3::new(d[0], d[1], d[2]);
        if (dir.norm() - 1.0).abs() > 1e-6 {
            return fail(SwStatus::InvalidArgument, "bearing must be a unit vector");
        }
        let label = match label {
            l if l < 0 => None,
            l => match u32::try_from(l) {
                Ok(l) => Some(l),
                Err(_) => return fail(SwStatus::InvalidArgument, "label out of range"),
            },
        };
        let obs = DetectionObservation {
            observer: h.inner.id(),
            t,
            label,
            dir,
            inv_depth,
            cam_rot: Rot3(nalgebra::Matrix3::from_row_slice(r)),
            cam_pos: nalgebra::Vector3::new(p[0], p[1], p[2]),
            sigma_dir: h.cfg.sigmas.detection_dir,
            sigma_inv_depth: h.cfg.sigmas.detection_inv_depth_frac * inv_depth,
        };
        ingest(h, Event::Detection(obs))
    })
}

/// Feeds a message received from another drone, as produced by
/// [`sw_estimator_pop_message`].
///
/// # Safety
/// `h` must be a live estimator handle; `json` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_push_message(h: *mut SwEstimator, json: *const c_char) -> SwStatus {
    with_estimator(h, |h| {
        let s = match str_arg(json, "json") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match serde_json::from_str::<Message>(s) {
            Ok(m) => ingest(h, Event::Remote(m)),
            Err(e) => fail(SwStatus::InvalidArgument, format!("bad message: {e}")),
        }
    })
}

/// Pops the oldest message this estimator wants broadcast, as JSON. Returns
/// `NotAvailable` when the outbox is empty and `BufferTooSmall` (leaving the
/// message queued) when `cap` is short; `len` receives the length in both
/// the success and the short-buffer case.
///
/// # Safety
/// `h` must be a live estimator handle; `buf` valid for `cap` bytes or null;
/// `len` valid or null.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_pop_message(
    h: *mut SwEstimator,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> SwStatus {
    with_estimator(h, |h| {
        let Some(m) = h.outbox.front() else {
            return SwStatus::NotAvailable;
        };
        let json = serde_json::to_string(m).expect("messages serialize");
        let s = write_out(json.as_bytes(), buf, cap, len);
        if s == SwStatus::Ok {
            h.outbox.pop_front();
        }
        s
    })
}

/// Advances the estimator clock: assembles due frames and optimizes.
///
/// # Safety
/// `h` must be a live estimator handle.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_advance(h: *mut SwEstimator, now: f64) -> SwStatus {
    with_estimator(h, |h| {
        if !now.is_finite() {
            return fail(SwStatus::InvalidArgument, "now must be finite");
        }
        h.inner.advance(now);
        SwStatus::Ok
    })
}

/// Writes 1 to `initialized` once the estimator has a relative frame.
///
/// # Safety
/// `h` must be a live estimator handle; `initialized` valid.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_initialized(h: *mut SwEstimator, initialized: *mut i32) -> SwStatus {
    with_estimator(h, |h| {
        if initialized.is_null() {
            return fail(SwStatus::NullPointer, "initialized is null");
        }
        *initialized = i32::from(h.inner.init_state() == InitState::Initialized);
        SwStatus::Ok
    })
}

/// Pose of `drone` at `now` in this drone's local frame.
///
/// # Safety
/// `h` must be a live estimator handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sw_estimator_estimate(
    h: *mut SwEstimator,
    drone: u32,
    now: f64,
    out: *mut SwEstimate,
) -> SwStatus {
    with_estimator(h, |h| {
        if out.is_null() {
            return fail(SwStatus::NullPointer, "out is null");
        }
        let Some(e) = h.inner.estimate(drone, now) else {
            return fail(SwStatus::NotAvailable, format!("no estimate for drone {drone}"));
        };
        let m = e.pose6.rotation.matrix();
        *out = SwEstimate {
            t: e.t,
            pose: e.pose4.into(),
            rotation: std::array::from_fn(|i| m[(i / 3, i % 3)]),
            status: match e.status {
                EstimateStatus::Odometry => SwEstimateStatus::Odometry,
                EstimateStatus::Propagated => SwEstimateStatus::Propagated,
                EstimateStatus::Stale => SwEstimateStatus::Stale,
            },
        };
        SwStatus::Ok
    })
}

/// Simulates, estimates and scores a scenario file. `seed` overrides the
/// file's seed unless negative. When `out_dir` is non-null the run's
/// outputs are written there. Returns `Diverged` (with the run still
/// stored in `out`) if any solve diverged.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out_dir` NUL-terminated or null;
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sw_run_scenario(
    config_path: *const c_char,
    seed: i64,
    out_dir: *const c_char,
    out: *mut *mut SwRun,
) -> SwStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwStatus::NullPointer, "out is null");
        }
        let path = match str_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let dir = if out_dir.is_null() {
            None
        } else {
            match str_arg(out_dir, "out_dir") {
                Ok(d) => Some(d),
                Err(s) => return s,
            }
        };
        let sc = match Scenario::load(Path::new(path)) {
            Ok(sc) => sc,
            Err(e) => return fail(SwStatus::Config, e.to_string()),
        };
        let opts = RunOptions { seed: u64::try_from(seed).ok(), ..RunOptions::default() };
        let run = match run_scenario(&sc, &opts) {
            Ok(r) => r,
            Err(e) => return fail(SwStatus::Config, e.to_string()),
        };
        if let Some(d) = dir {
            if let Err(e) = write_outputs(Path::new(d), &run) {
                return fail(SwStatus::Io, e.to_string());
            }
        }
        let diverged = run.report.summary.any_diverged;
        *out = Box::into_raw(Box::new(SwRun { inner: run }));
        if diverged {
            return fail(SwStatus::Diverged, "a solve diverged");
        }
        SwStatus::Ok
    })
}

/// # Safety
/// `run` must come from [`sw_run_scenario`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn sw_run_free(run: *mut SwRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live run handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sw_run_summary(run: *const SwRun, out: *mut SwSummary) -> SwStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), out.is_null()) else {
            return fail(SwStatus::NullPointer, "run or out is null");
        };
        let s = &run.inner.report.summary;
        let nan = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = SwSummary {
            all_initialized: s.all_initialized,
            all_converged: s.all_converged,
            any_diverged: s.any_diverged,
            re_pos: nan(s.re_pos),
            vio_re_pos: nan(s.vio_re_pos),
            ate_pos: nan(s.ate_pos),
            drift: nan(s.drift),
            vio_drift: nan(s.vio_drift),
        };
        SwStatus::Ok
    })
}

/// Copies the full metrics report (JSON) into `buf`.
///
/// # Safety
/// `run` must be a live run handle; `buf` valid for `cap` bytes or null;
/// `len` valid or null.
#[no_mangle]
pub unsafe extern "C" fn sw_run_report_json(
    run: *const SwRun,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> SwStatus {
    guard(|| match run.as_ref() {
        Some(run) => write_out(run.inner.report.to_json().as_bytes(), buf, cap, len),
        None => fail(SwStatus::NullPointer, "run is null"),
    })
}
