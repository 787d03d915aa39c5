//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture` gives a
//! one-line verdict per criterion.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmloc::estimator::{
    check_observability, classify, propagate, InitState, Links, Observability, PairEvidence, SolvedKeyframe, Snapshot,
};
use swarmloc::eval::{run_scenario, RunOptions, RunResult};
use swarmloc::geometry::{compose4, inverse4, relative4, wrap_angle, Pose4, Rot3};
use swarmloc::measurements::{
    detection_forward_model, linearize, residual, DetectionEdge, DistanceEdge, MapEdge, MeasurementEdge, OdometryEdge,
};
use swarmloc::simworld::{simulate, Scenario};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    Scenario::load(&path).expect("scenario loads")
}

fn run(sc: &Scenario, opts: RunOptions) -> RunResult {
    run_scenario(sc, &opts).expect("scenario runs")
}

fn lossless() -> RunOptions {
    RunOptions { loss_uwb: Some(0.0), loss_vio: Some(0.0), ..RunOptions::default() }
}

/// Lossless reference run shared by several criteria.
fn reference() -> &'static RunResult {
    static RUN: OnceLock<RunResult> = OnceLock::new();
    RUN.get_or_init(|| run(&scenario("reference"), lossless()))
}

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n:>2} {name:<28} {}  {detail}", if ok { "PASS" } else { "FAIL" });
}

fn pose_err(a: &Pose4, b: &Pose4) -> f64 {
    (a.translation() - b.translation()).norm().max(wrap_angle(a.yaw - b.yaw).abs())
}

#[test]
fn c01_zero_noise_exact_recovery() {
    let start = Instant::now();
    let r = run(&scenario("zero_noise"), RunOptions::default());
    let elapsed = start.elapsed();
    let truth = &r.replay.truth;
    let mut worst_graph = 0.0f64;
    let mut worst_est = 0.0f64;
    let mut samples = 0usize;
    for (&k, est) in &r.replay.estimators {
        let origin = truth.pose4_at(k, 0.0).unwrap();
        for (&(d, key), state) in &est.graph().states {
            let t = key as f64 * 1e-6;
            let gt = relative4(&origin, &truth.pose4_at(d, t).unwrap());
            worst_graph = worst_graph.max(pose_err(state, &gt));
        }
        for (&d, series) in &r.replay.estimates[&k] {
            for e in series.values() {
                let gt = relative4(&origin, &truth.pose4_at(d, e.t).unwrap());
                worst_est = worst_est.max(pose_err(&e.pose4, &gt));
                samples += 1;
            }
        }
    }
    let all_init = r.replay.estimators.values().all(|e| e.init_state() == InitState::Initialized);
    let ok = all_init && samples > 0 && worst_graph < 1e-6 && worst_est < 1e-6 && elapsed < Duration::from_secs(30);
    verdict(
        1,
        "zero-noise recovery",
        ok,
        format!("graph {worst_graph:.2e}  published {worst_est:.2e} over {samples} samples  {elapsed:.2?}"),
    );
    assert!(ok);
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose4 {
    Pose4 {
        x: rng.random_range(-5.0..5.0),
        y: rng.random_range(-5.0..5.0),
        z: rng.random_range(-2.0..2.0),
        yaw: rng.random_range(-3.1..3.1),
    }
}

fn central_difference(edge: &MeasurementEdge, a: &Pose4, b: &Pose4, which: usize, k: usize, h: f64) -> Vec<f64> {
    let eval = |s: f64| {
        let mut p = if which == 0 { a.as_array() } else { b.as_array() };
        p[k] += s;
        let q = Pose4 { x: p[0], y: p[1], z: p[2], yaw: p[3] };
        if which == 0 { residual(edge, &q, b) } else { residual(edge, a, &q) }.unwrap()
    };
    let (plus, minus) = (eval(h), eval(-h));
    (0..plus.dim).map(|r| (plus.values[r] - minus.values[r]) / (2.0 * h)).collect()
}

/// Largest relative Frobenius error over both endpoint blocks. Blocks with
/// norm below one are compared absolutely.
fn jacobian_error(edge: &MeasurementEdge, a: &Pose4, b: &Pose4) -> f64 {
    let lin = linearize(edge, a, b).unwrap();
    let mut worst = 0.0f64;
    for which in 0..2 {
        let mut diff = 0.0;
        let mut norm = 0.0;
        for k in 0..4 {
            let col = central_difference(edge, a, b, which, k, 1e-6);
            for (r, v) in col.iter().enumerate() {
                diff += (lin.jacobians[which][(r, k)] - v).powi(2);
                norm += v * v;
            }
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1.0));
    }
    worst
}

#[test]
fn c02_jacobians_match_central_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 4];
    let mut count = 0usize;
    while count < 1000 {
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        if (a.translation() - b.translation()).norm() < 0.5 {
            continue;
        }
        let z = random_pose(&mut rng);
        let sigma = [
            rng.random_range(0.02..0.5),
            rng.random_range(0.02..0.5),
            rng.random_range(0.02..0.5),
            rng.random_range(0.01..0.2),
        ];
        let cam_rot = Rot3::from_euler(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-3.0..3.0));
        let cam_pos = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let body = swarmloc::geometry::rotate_z_inv(a.yaw, &(b.translation() - a.translation()));
        let (dir, inv) = detection_forward_model(&body, &cam_rot, &cam_pos).unwrap();
        let noisy = (dir + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.02)).normalize();
        let edges = [
            MeasurementEdge::Odometry(OdometryEdge { drone: 1, t_prev: 0.0, t: 1.0, delta: z, sigma }),
            MeasurementEdge::Map(MapEdge { from: (1, 0.0), to: (2, 1.0), rel: z, sigma, inliers: 40 }),
            MeasurementEdge::Distance(DistanceEdge { i: 1, j: 2, t: 0.0, d: rng.random_range(0.0..8.0), sigma: 0.15 }),
            MeasurementEdge::Detection(DetectionEdge {
                observer: 1,
                target: 2,
                t: 0.0,
                dir: noisy,
                inv_depth: inv * rng.random_range(0.8..1.2),
                cam_rot,
                cam_pos,
                sigma_dir: 0.02,
                sigma_inv_depth: 0.05 * inv,
            }),
        ];
        for (w, e) in worst.iter_mut().zip(&edges) {
            *w = w.max(jacobian_error(e, &a, &b));
        }
        count += 1;
    }
    let elapsed = start.elapsed();
    let max = worst.iter().copied().fold(0.0, f64::max);
    let ok = max < 1e-5 && elapsed < Duration::from_secs(10);
    verdict(
        2,
        "jacobians vs finite diff",
        ok,
        format!(
            "{count} configs per edge type  odom {:.1e} map {:.1e} dist {:.1e} det {:.1e}  {elapsed:.2?}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
    assert!(ok);
}

#[test]
fn c03_fusion_beats_vio() {
    let r = reference();
    let s = &r.report.summary;
    let sigma_ok = r.scenario.noise.uwb_sigma == 0.15 && r.scenario.estimator.sigmas.distance == 0.15;
    let (re, vio_re) = (s.re_pos.unwrap(), s.vio_re_pos.unwrap());
    let (drift, vio_drift) = (s.drift.unwrap(), s.vio_drift.unwrap());
    let ok = sigma_ok && re <= 0.7 * vio_re && drift < vio_drift;
    verdict(
        3,
        "fusion beats VIO",
        ok,
        format!(
            "RE {re:.4} vs VIO {vio_re:.4} ({:.0}% lower)  drift {drift:.5} vs VIO {vio_drift:.5}",
            100.0 * (1.0 - re / vio_re)
        ),
    );
    assert!(ok);
}

#[test]
fn c04_map_ablation_increases_ate() {
    let sc = scenario("loop_revisit");
    let full = run(&sc, RunOptions::default());
    let no_map = run(&sc, RunOptions { ablation: swarmloc::eval::Ablation::NoMap, ..RunOptions::default() });
    let a = full.report.summary.ate_pos.unwrap();
    let b = no_map.report.summary.ate_pos.unwrap();
    let ok = b > a;
    verdict(4, "no-map ATE > full ATE", ok, format!("full {a:.4}  no-map {b:.4}"));
    assert!(ok);
}

#[test]
fn c05_static_initialization() {
    let map_sc = scenario("static_map");
    let a = run(&map_sc, RunOptions::default());
    let b = run(&map_sc, RunOptions::default());
    let init_times: Vec<Option<f64>> = a.replay.estimators.keys().map(|d| a.replay.init_time.get(d).copied()).collect();
    let map_init = init_times.iter().all(Option::is_some);
    let no_motion = a.replay.estimators.values().all(|e| {
        e.observability()
            .evidence
            .values()
            .all(|ev| !ev.motion_k && !ev.motion_i && ev.map_edge && !(ev.det_k_to_i && ev.det_i_to_k))
    });
    let re = a.report.summary.re_pos.unwrap_or(f64::INFINITY);

    let dist_sc = scenario("static_distance");
    let c = run(&dist_sc, RunOptions::default());
    let d = run(&dist_sc, RunOptions::default());
    let not_ready = c.replay.estimators.values().all(|e| e.init_state() == InitState::NotReady)
        && c.replay.estimators.values().all(|e| {
            e.observability().evidence.values().all(|ev| ev.distance && !ev.motion_k && !ev.map_edge)
        });
    let deterministic = a.report.to_json() == b.report.to_json() && c.report.to_json() == d.report.to_json();

    let ok = map_init && no_motion && re < 0.1 && not_ready && deterministic;
    verdict(
        5,
        "static initialization",
        ok,
        format!(
            "map pair init at {init_times:?} without motion, RE {re:.4}; distance pair not_ready {not_ready}; deterministic {deterministic}"
        ),
    );
    assert!(ok);
}

#[test]
fn c06_loss_robustness() {
    let lossy = run(
        &scenario("reference"),
        RunOptions { loss_uwb: Some(0.278), loss_vio: Some(0.274), ..RunOptions::default() },
    );
    let clean = reference();
    let s = &lossy.report.summary;
    let (re, re0) = (s.re_pos.unwrap(), clean.report.summary.re_pos.unwrap());
    let solves: usize = lossy.report.estimators.iter().map(|e| e.solves - e.restarts).sum();
    let ok = s.all_initialized && s.all_converged && !s.any_diverged && solves > 0 && re < 2.0 * re0;
    verdict(
        6,
        "loss robustness",
        ok,
        format!(
            "initialized {}  {solves} graph solves all converged {}  RE {re:.4} vs lossless {re0:.4} ({:.2}x)",
            s.all_initialized,
            s.all_converged,
            re / re0
        ),
    );
    assert!(ok);
}

#[test]
fn c07_outlier_rejection() {
    let mut sc = scenario("reference");
    sc.outliers.uwb_prob = 0.10;
    sc.oracle.gross_prob = 0.02;
    let dirty = run(&sc, lossless());
    let clean = reference();
    let o = &dirty.report.outliers;
    let injected = o.uwb_injected + o.map_injected;
    let rejected = o.uwb_rejected + o.map_rejected;
    let frac = rejected as f64 / injected.max(1) as f64;
    let (re, re0) = (dirty.report.summary.re_pos.unwrap(), clean.report.summary.re_pos.unwrap());
    let ok = injected > 0 && o.map_injected > 0 && frac >= 0.8 && re <= 1.5 * re0;
    verdict(
        7,
        "outlier rejection",
        ok,
        format!(
            "rejected {rejected}/{injected} ({:.0}%; uwb {}/{} map {}/{})  RE {re:.4} vs clean {re0:.4} ({:.2}x)",
            100.0 * frac,
            o.uwb_rejected,
            o.uwb_injected,
            o.map_rejected,
            o.map_injected,
            re / re0
        ),
    );
    assert!(ok);
}

/// One row of the observability table: `None` entries are "don't care".
struct Row {
    motion_k: Option<bool>,
    motion_i: Option<bool>,
    distance: Option<bool>,
    det_k_to_i: Option<bool>,
    det_i_to_k: Option<bool>,
    map_edge: Option<bool>,
    expect: Observability,
}

const TABLE: [Row; 5] = [
    Row { motion_k: None, motion_i: None, distance: None, det_k_to_i: None, det_i_to_k: None, map_edge: Some(true), expect: Observability::Dof6 },
    Row { motion_k: None, motion_i: None, distance: None, det_k_to_i: Some(true), det_i_to_k: Some(true), map_edge: None, expect: Observability::Dof6 },
    Row { motion_k: Some(true), motion_i: Some(false), distance: Some(true), det_k_to_i: None, det_i_to_k: Some(false), map_edge: Some(false), expect: Observability::Dof3 },
    Row { motion_k: Some(true), motion_i: Some(false), distance: None, det_k_to_i: None, det_i_to_k: Some(true), map_edge: Some(false), expect: Observability::Dof6 },
    Row { motion_k: Some(true), motion_i: Some(true), distance: Some(true), det_k_to_i: None, det_i_to_k: None, map_edge: None, expect: Observability::Dof6 },
];

fn expand(row: &Row) -> Vec<PairEvidence> {
    let cols = [row.motion_k, row.motion_i, row.distance, row.det_k_to_i, row.det_i_to_k, row.map_edge];
    (0..64u32)
        .map(|bits| std::array::from_fn::<bool, 6, _>(|c| bits >> c & 1 == 1))
        .filter(|v| cols.iter().zip(v).all(|(c, b)| c.is_none_or(|c| c == *b)))
        .map(|v| PairEvidence {
            motion_k: v[0],
            motion_i: v[1],
            distance: v[2],
            det_k_to_i: v[3],
            det_i_to_k: v[4],
            map_edge: v[5],
        })
        .collect()
}

fn links_for(e: &PairEvidence, k: u32, i: u32) -> Links {
    let mut l = Links::default();
    if e.motion_k {
        l.motion.insert(k);
    }
    if e.motion_i {
        l.motion.insert(i);
    }
    if e.distance {
        l.add_distance(k, i);
    }
    if e.det_k_to_i {
        l.add_detection(k, i);
    }
    if e.det_i_to_k {
        l.add_detection(i, k);
    }
    if e.map_edge {
        l.add_map(k, i);
    }
    l
}

#[test]
fn c08_observability_table() {
    let drones: BTreeSet<u32> = [1, 2].into();
    let mut checked = 0;
    let mut failures = Vec::new();
    for (n, row) in TABLE.iter().enumerate() {
        for ev in expand(row) {
            let report = check_observability(1, &drones, &links_for(&ev, 1, 2));
            let got = [classify(&ev), report.level(2)];
            checked += 1;
            if got.iter().any(|g| *g != row.expect) || report.evidence[&2] != ev {
                failures.push((n + 1, ev, got));
            }
        }
    }
    let ok = failures.is_empty();
    verdict(8, "observability table", ok, format!("{} rows, {checked} combinations, failures {failures:?}", TABLE.len()));
    assert!(ok);
}

#[test]
fn c09_decentralized_agreement() {
    let r = reference();
    let (e1, e2) = (&r.replay.estimators[&1], &r.replay.estimators[&2]);
    let tol = 10.0 * 1e-6;
    let mut worst = 0.0f64;
    let mut common = 0;
    for &(d, key) in e1.graph().states.keys() {
        if d != 1 {
            continue;
        }
        let t = key as f64 * 1e-6;
        let (Some(a1), Some(b1), Some(a2), Some(b2)) = (e1.state(1, t), e1.state(2, t), e2.state(1, t), e2.state(2, t))
        else {
            continue;
        };
        let p12 = relative4(&a1, &b1);
        let p21 = relative4(&b2, &a2);
        worst = worst.max(pose_err(&compose4(&p12, &p21), &Pose4::identity()));
        common += 1;
    }
    let ok = common > 10 && worst < tol;
    verdict(9, "decentralized agreement", ok, format!("{common} common frames  max |P12 * P21 - I| {worst:.2e} (tol {tol:.0e})"));
    assert!(ok);
}

#[test]
fn c10_determinism() {
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["reference", "loop_revisit", "static_map", "static_distance", "zero_noise"] {
        let sc = scenario(name);
        let logs_equal = simulate(&sc).unwrap().to_jsonl_string() == simulate(&sc).unwrap().to_jsonl_string();
        let opts = RunOptions { packet_log: true, ..RunOptions::default() };
        let (a, b) = (run(&sc, opts.clone()), run(&sc, opts));
        let reports_equal = a.report.to_json() == b.report.to_json() && a.replay.packet_log == b.replay.packet_log;
        ok &= logs_equal && reports_equal;
        details.push(format!("{name}:{}", if logs_equal && reports_equal { "same" } else { "differ" }));
    }
    verdict(10, "determinism", ok, details.join(" "));
    assert!(ok);
}

#[test]
fn c11_propagation_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (p, vs, vn) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        let via_fn = propagate(&p, &vs, &vn);
        let direct = compose4(&compose4(&p, &inverse4(&vs)), &vn);
        worst = worst.max(pose_err(&via_fn, &direct));
        worst = worst.max(pose_err(&propagate(&p, &vs, &vs), &p));
        let snap = Snapshot {
            t: 0.0,
            keyframes: [(7, SolvedKeyframe { t: 0.0, state: p, vio4: vs })].into(),
        };
        worst = worst.max(pose_err(&snap.propagate(7, &vn).unwrap(), &direct));
    }

    let sc = scenario("reference");
    let start = Instant::now();
    let r = run(&sc, lossless());
    let wall = start.elapsed().as_secs_f64();
    // Updates per one-second window of simulated time, over every full
    // window after a pair's first estimate.
    let mut min_rate = usize::MAX;
    for series in r.replay.estimates.values().flat_map(|per_target| per_target.values()) {
        let first = *series.keys().next().unwrap();
        let mut w = first;
        while w + 1_000_000 <= (sc.duration * 1e6) as i64 {
            min_rate = min_rate.min(series.range(w..w + 1_000_000).count());
            w += 1_000_000;
        }
    }
    let ok = worst < 1e-12 && min_rate >= 100 && wall < sc.duration;
    verdict(
        11,
        "propagation contract",
        ok,
        format!(
            "identity {worst:.1e}  min {min_rate} updates per simulated second per pair  replay {wall:.2} s for {:.0} s simulated",
            sc.duration
        ),
    );
    assert!(ok);
}
