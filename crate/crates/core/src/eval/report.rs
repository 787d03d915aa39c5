//! Metric report of a replay. Every key is always present; undefined
//! metrics are `null`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_ate, compute_drift, compute_re, path_length, relative_series};
use super::runner::{Ablation, Replay};
use crate::estimator::{EdgeDecision, EdgeId, Estimate, EstimateStatus, Pruning, SolveKind, Termination};
use crate::geometry::{compose4, relative4, Pose4};
use crate::netsim::{ClassStats, MsgClass};
use crate::simworld::Scenario;
use crate::{time_key, DroneId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub observer: DroneId,
    pub target: DroneId,
    pub samples: usize,
    pub re_pos: Option<[f64; 3]>,
    pub re_pos_norm: Option<f64>,
    pub re_yaw: Option<f64>,
    /// Same statistics for VIO aligned to truth at each drone's start.
    pub vio_re_pos: Option<[f64; 3]>,
    pub vio_re_pos_norm: Option<f64>,
    pub vio_re_yaw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub observer: DroneId,
    pub drone: DroneId,
    pub samples: usize,
    pub ate_pos: Option<f64>,
    pub ate_yaw: Option<f64>,
    pub drift: Option<f64>,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VioReport {
    pub drone: DroneId,
    pub ate_pos: Option<f64>,
    pub ate_yaw: Option<f64>,
    pub drift: Option<f64>,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub drone: DroneId,
    pub init_time: Option<f64>,
    pub graph_frames: usize,
    pub frames_considered: u64,
    pub keyframes: u64,
    pub pruned: u64,
    pub late_dropped: u64,
    pub map_edges_generated: u64,
    pub solves: usize,
    /// Graph solves only; restart probes may stop anywhere.
    pub nonconverged: usize,
    pub diverged: usize,
    pub restarts: usize,
}

/// Injected gross errors that reached an estimator, and how many of them the
/// estimator refused. Counts are summed over observers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub uwb_injected: usize,
    pub uwb_rejected: usize,
    pub uwb_clean_rejected: usize,
    pub map_injected: usize,
    pub map_rejected: usize,
    pub map_clean_rejected: usize,
    pub uwb_rejected_fraction: Option<f64>,
    pub map_rejected_fraction: Option<f64>,
    pub rejected_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub all_initialized: bool,
    pub all_converged: bool,
    pub any_diverged: bool,
    /// Means over observer/target pairs.
    pub re_pos: Option<f64>,
    pub re_yaw: Option<f64>,
    pub vio_re_pos: Option<f64>,
    pub vio_re_yaw: Option<f64>,
    /// Means over observer/drone trajectories.
    pub ate_pos: Option<f64>,
    pub ate_yaw: Option<f64>,
    pub drift: Option<f64>,
    /// Means over drones.
    pub vio_ate_pos: Option<f64>,
    pub vio_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: String,
    pub seed: u64,
    pub ablation: Ablation,
    pub pruning: Pruning,
    pub m_max: usize,
    pub loss_uwb: f64,
    pub loss_vio: f64,
    pub summary: Summary,
    pub pairs: Vec<PairReport>,
    pub trajectories: Vec<TrajectoryReport>,
    pub vio: Vec<VioReport>,
    pub estimators: Vec<EstimatorReport>,
    pub outliers: OutlierReport,
    pub network: BTreeMap<MsgClass, ClassStats>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Re-keys a per-tick series by the time each estimate refers to. Held
/// values collapse to the newest tick that served them.
fn by_time(series: &BTreeMap<i64, Estimate>) -> BTreeMap<i64, Estimate> {
    series.values().map(|e| (time_key(e.t), *e)).collect()
}

fn optimized(status: EstimateStatus) -> bool {
    status != EstimateStatus::Odometry
}

struct Views<'a> {
    replay: &'a Replay,
}

impl Views<'_> {
    fn gt(&self, d: DroneId, key: i64) -> Option<Pose4> {
        self.replay.truth.pose4_at(d, key as f64 * 1e-6)
    }

    fn gt_start(&self, d: DroneId) -> Option<Pose4> {
        self.replay.truth.drones.get(&d)?.poses4.first().copied()
    }

    /// VIO of `d` at `key` placed in the world frame with its true start.
    fn aligned_vio(&self, d: DroneId, key: i64) -> Option<Pose4> {
        Some(compose4(&self.gt_start(d)?, self.replay.vio.get(&d)?.get(&key)?))
    }

    /// True path of `d` up to `key`, in the world frame.
    fn gt_path(&self, d: DroneId, until: i64) -> Vec<Pose4> {
        let Some(truth) = self.replay.truth.drones.get(&d) else { return Vec::new() };
        let hz = self.replay.truth.master_hz;
        (truth.start_tick..truth.end_tick)
            .take_while(|tick| time_key(*tick as f64 / hz) <= until)
            .map(|tick| *truth.pose4(tick).expect("active tick"))
            .collect()
    }
}

fn pair_report(v: &Views, observer: DroneId, target: DroneId) -> PairReport {
    let est = &v.replay.estimates[&observer];
    let empty = BTreeMap::new();
    let own = est.get(&observer).unwrap_or(&empty);
    let other = est.get(&target).unwrap_or(&empty);
    let mut fused_k = Vec::new();
    let mut fused_i = Vec::new();
    let mut vio_k = Vec::new();
    let mut vio_i = Vec::new();
    for ei in by_time(other).values() {
        let key = time_key(ei.t);
        let Some(ek) = own.get(&key) else { continue };
        if !optimized(ei.status) || !optimized(ek.status) {
            continue;
        }
        let (Some(gk), Some(gi)) = (v.gt(observer, key), v.gt(target, key)) else { continue };
        fused_k.push((ek.pose4, gk));
        fused_i.push((ei.pose4, gi));
        if let (Some(vk), Some(vi)) = (v.aligned_vio(observer, key), v.aligned_vio(target, key)) {
            vio_k.push((vk, gk));
            vio_i.push((vi, gi));
        }
    }
    let fused = compute_re(&relative_series(&fused_k, &fused_i)).ok();
    let vio = compute_re(&relative_series(&vio_k, &vio_i)).ok();
    PairReport {
        observer,
        target,
        samples: fused_k.len(),
        re_pos: fused.map(|r| r.axes),
        re_pos_norm: fused.map(|r| r.position()),
        re_yaw: fused.map(|r| r.yaw),
        vio_re_pos: vio.map(|r| r.axes),
        vio_re_pos_norm: vio.map(|r| r.position()),
        vio_re_yaw: vio.map(|r| r.yaw),
    }
}

fn trajectory_report(v: &Views, observer: DroneId, drone: DroneId) -> TrajectoryReport {
    let anchor = v.gt_start(observer).unwrap_or_default();
    let series = v.replay.estimates[&observer].get(&drone);
    let mut pairs = Vec::new();
    let mut last_key = None;
    for e in series.map(by_time).unwrap_or_default().values() {
        if !optimized(e.status) {
            continue;
        }
        let key = time_key(e.t);
        if let Some(g) = v.gt(drone, key) {
            pairs.push((e.pose4, relative4(&anchor, &g)));
            last_key = Some(key);
        }
    }
    let ate = compute_ate(&pairs).ok();
    let path: Vec<Pose4> = last_key.map_or_else(Vec::new, |k| v.gt_path(drone, k));
    let drift = pairs.last().and_then(|(e, _)| {
        let local: Vec<Pose4> = path.iter().map(|g| relative4(&anchor, g)).collect();
        compute_drift(e, &local).ok()
    });
    TrajectoryReport {
        observer,
        drone,
        samples: pairs.len(),
        ate_pos: ate.map(|a| a.position),
        ate_yaw: ate.map(|a| a.yaw),
        drift,
        length: path_length(&path),
    }
}

fn vio_report(v: &Views, drone: DroneId) -> VioReport {
    let mut pairs = Vec::new();
    let mut last = None;
    for key in v.replay.vio.get(&drone).into_iter().flat_map(BTreeMap::keys) {
        if let (Some(a), Some(g)) = (v.aligned_vio(drone, *key), v.gt(drone, *key)) {
            pairs.push((a, g));
            last = Some(*key);
        }
    }
    let ate = compute_ate(&pairs).ok();
    let path = last.map_or_else(Vec::new, |k| v.gt_path(drone, k));
    VioReport {
        drone,
        ate_pos: ate.map(|a| a.position),
        ate_yaw: ate.map(|a| a.yaw),
        drift: pairs.last().and_then(|(a, _)| compute_drift(a, &path).ok()),
        length: path_length(&path),
    }
}

fn outlier_report(replay: &Replay) -> OutlierReport {
    let mut r = OutlierReport::default();
    for est in replay.estimators.values() {
        for (id, decision) in est.audit() {
            let rejected = decision.rejected() && *decision != EdgeDecision::Unassociated;
            match *id {
                EdgeId::Distance { i, j, t } => {
                    if replay.uwb_outliers.contains(&(i, j, t)) {
                        r.uwb_injected += 1;
                        r.uwb_rejected += usize::from(rejected);
                    } else {
                        r.uwb_clean_rejected += usize::from(rejected);
                    }
                }
                EdgeId::Map { from, to } => {
                    let gross = replay
                        .oracle
                        .is_gross_pair((from.0, from.1 as f64 * 1e-6), (to.0, to.1 as f64 * 1e-6));
                    if gross {
                        r.map_injected += 1;
                        r.map_rejected += usize::from(rejected);
                    } else {
                        r.map_clean_rejected += usize::from(rejected);
                    }
                }
                EdgeId::Detection { .. } => {}
            }
        }
    }
    r.uwb_rejected_fraction = ratio(r.uwb_rejected, r.uwb_injected);
    r.map_rejected_fraction = ratio(r.map_rejected, r.map_injected);
    r.rejected_fraction = ratio(r.uwb_rejected + r.map_rejected, r.uwb_injected + r.map_injected);
    r
}

/// Scores a replay against the ground truth it carries.
pub fn build_report(sc: &Scenario, ablation: Ablation, replay: &Replay) -> MetricReport {
    let v = Views { replay };
    let drones: Vec<DroneId> = replay.truth.drones.keys().copied().collect();
    let mut pairs = Vec::new();
    let mut trajectories = Vec::new();
    for &k in replay.estimates.keys() {
        for &i in &drones {
            if i != k {
                pairs.push(pair_report(&v, k, i));
            }
            trajectories.push(trajectory_report(&v, k, i));
        }
    }
    let vio: Vec<VioReport> = drones.iter().map(|d| vio_report(&v, *d)).collect();
    let estimators: Vec<EstimatorReport> = replay
        .estimators
        .iter()
        .map(|(id, est)| {
            let log = est.solve_log();
            let graph = log.iter().filter(|r| r.kind == SolveKind::Graph);
            let c = est.counters();
            EstimatorReport {
                drone: *id,
                init_time: replay.init_time.get(id).copied(),
                graph_frames: est.graph().len(),
                frames_considered: c.frames_considered,
                keyframes: c.keyframes,
                pruned: c.pruned,
                late_dropped: c.late_dropped,
                map_edges_generated: c.map_edges_generated,
                solves: log.len(),
                nonconverged: graph.clone().filter(|r| !r.stats.converged()).count(),
                diverged: graph.clone().filter(|r| r.stats.termination == Termination::Diverged).count(),
                restarts: log.iter().filter(|r| r.kind == SolveKind::Restart).count(),
            }
        })
        .collect();

    let fused_pairs: Vec<&PairReport> = pairs.iter().filter(|p| p.re_pos_norm.is_some()).collect();
    let summary = Summary {
        all_initialized: estimators.iter().all(|e| e.init_time.is_some()),
        all_converged: estimators.iter().all(|e| e.nonconverged == 0),
        any_diverged: estimators.iter().any(|e| e.diverged > 0),
        re_pos: mean(fused_pairs.iter().filter_map(|p| p.re_pos_norm)),
        re_yaw: mean(fused_pairs.iter().filter_map(|p| p.re_yaw)),
        vio_re_pos: mean(fused_pairs.iter().filter_map(|p| p.vio_re_pos_norm)),
        vio_re_yaw: mean(fused_pairs.iter().filter_map(|p| p.vio_re_yaw)),
        ate_pos: mean(trajectories.iter().filter_map(|t| t.ate_pos)),
        ate_yaw: mean(trajectories.iter().filter_map(|t| t.ate_yaw)),
        drift: mean(trajectories.iter().filter_map(|t| t.drift)),
        vio_ate_pos: mean(vio.iter().filter_map(|r| r.ate_pos)),
        vio_drift: mean(vio.iter().filter_map(|r| r.drift)),
    };
    MetricReport {
        scenario: sc.name.clone(),
        seed: sc.seed,
        ablation,
        pruning: sc.estimator.pruning,
        m_max: sc.estimator.m_max,
        loss_uwb: sc.network.drop_distance,
        loss_vio: sc.network.drop_vio,
        summary,
        pairs,
        trajectories,
        vio,
        estimators,
        outliers: outlier_report(replay),
        network: replay.network.clone(),
    }
}
