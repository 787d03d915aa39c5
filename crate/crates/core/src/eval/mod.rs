//! Scenario runs, ablations and their metrics.

pub mod metrics;
mod report;
mod runner;

pub use report::{
    build_report, EstimatorReport, MetricReport, OutlierReport, PairReport, Summary, TrajectoryReport, VioReport,
};
pub use runner::{oracle_seed, replay, Ablation, Replay, RunOptions};

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::estimator::{EdgeDecision, EdgeId, Pruning};
use crate::netsim::NetError;
use crate::simworld::{simulate, MeasurementLog, Scenario, SimError};
use crate::DroneId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

/// A finished run: the log it consumed, the replay and its report.
pub struct RunResult {
    pub scenario: Scenario,
    pub log: MeasurementLog,
    pub replay: Replay,
    pub report: MetricReport,
}

/// Simulates `sc` under `opts` and replays it.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunResult, EvalError> {
    let sc = opts.apply(sc)?;
    let log = simulate(&sc)?;
    run_log(sc, log, opts)
}

/// Replays an existing log. `sc` supplies estimator and network settings.
pub fn run_log(sc: Scenario, log: MeasurementLog, opts: &RunOptions) -> Result<RunResult, EvalError> {
    let replay = replay(&sc, &log, opts.packet_log)?;
    let report = build_report(&sc, opts.ablation, &replay);
    Ok(RunResult { scenario: sc, log, replay, report })
}

/// Runs the full system and each single-family ablation.
pub fn ablate(sc: &Scenario, opts: &RunOptions) -> Result<Vec<MetricReport>, EvalError> {
    Ablation::ALL
        .into_iter()
        .map(|a| {
            let o = RunOptions { ablation: a, ..opts.clone() };
            run_scenario(sc, &o).map(|r| r.report)
        })
        .collect()
}

/// Runs the same scenario under both pruning policies.
pub fn compare_pruning(sc: &Scenario, opts: &RunOptions) -> Result<Vec<MetricReport>, EvalError> {
    [Pruning::Random, Pruning::Fifo]
        .into_iter()
        .map(|p| {
            let o = RunOptions { pruning: Some(p), ..opts.clone() };
            run_scenario(sc, &o).map(|r| r.report)
        })
        .collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|source| EvalError::Write { path: path.to_owned(), source })
}

pub fn read_log(path: &Path) -> Result<MeasurementLog, EvalError> {
    let f = fs::File::open(path).map_err(|source| EvalError::Read { path: path.to_owned(), source })?;
    Ok(MeasurementLog::read_jsonl(std::io::BufReader::new(f))?)
}

pub fn write_log(path: &Path, log: &MeasurementLog) -> Result<(), EvalError> {
    let f = fs::File::create(path).map_err(|source| EvalError::Write { path: path.to_owned(), source })?;
    let mut w = BufWriter::new(f);
    log.write_jsonl(&mut w)?;
    Ok(())
}

/// Estimate log of one observer: one CSV line per target per tick.
pub fn estimates_csv(replay: &Replay, observer: DroneId) -> String {
    let mut s = String::from("t,drone,x,y,z,yaw,frame,status\n");
    let Some(per_target) = replay.estimates.get(&observer) else { return s };
    let mut rows: Vec<(i64, DroneId, &crate::estimator::Estimate)> = per_target
        .iter()
        .flat_map(|(d, series)| series.iter().map(move |(k, e)| (*k, *d, e)))
        .collect();
    rows.sort_by_key(|(k, d, _)| (*k, *d));
    for (_, d, e) in rows {
        let status = serde_json::to_value(e.status).expect("status serializes");
        let p = e.pose4;
        let _ = writeln!(
            s,
            "{:.6},{d},{:.9},{:.9},{:.9},{:.9},local-of-self,{}",
            e.t,
            p.x,
            p.y,
            p.z,
            p.yaw,
            status.as_str().unwrap_or_default()
        );
    }
    s
}

/// Trajectory of `drone` as seen by `observer`: `t x y z qx qy qz qw`.
pub fn tum_trajectory(replay: &Replay, observer: DroneId, drone: DroneId) -> String {
    let mut s = String::new();
    let series = replay.estimates.get(&observer).and_then(|m| m.get(&drone));
    for e in series.into_iter().flat_map(|m| m.values()) {
        let q = e.pose6.rotation.to_quaternion();
        let t = e.pose6.translation;
        let _ = writeln!(
            s,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            e.t, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    s
}

#[derive(Serialize)]
struct AuditLine {
    observer: DroneId,
    edge: EdgeId,
    decision: EdgeDecision,
}

/// One JSON line per audited edge per observer.
pub fn rejection_log(replay: &Replay) -> String {
    let mut s = String::new();
    for (observer, est) in &replay.estimators {
        for (edge, decision) in est.audit() {
            let line = AuditLine { observer: *observer, edge: *edge, decision: *decision };
            s.push_str(&serde_json::to_string(&line).expect("audit serializes"));
            s.push('\n');
        }
    }
    s
}

/// Writes estimate logs, trajectories, the rejection log, the packet log
/// when recorded, and `metrics.json` into `dir`.
pub fn write_outputs(dir: &Path, run: &RunResult) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Write { path: dir.to_owned(), source })?;
    let replay = &run.replay;
    for (&observer, per_target) in &replay.estimates {
        write(&dir.join(format!("estimates_{observer}.csv")), estimates_csv(replay, observer))?;
        for &drone in per_target.keys() {
            write(
                &dir.join(format!("traj_{observer}_{drone}.tum")),
                tum_trajectory(replay, observer, drone),
            )?;
        }
    }
    write(&dir.join("rejections.jsonl"), rejection_log(replay))?;
    if let Some(p) = &replay.packet_log {
        write(&dir.join("packets.jsonl"), p)?;
    }
    write(&dir.join("metrics.json"), run.report.to_json())
}

/// Writes a list of reports as one JSON array.
pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<(), EvalError> {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    write(path, s)
}
