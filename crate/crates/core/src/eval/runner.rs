//! Replays a measurement log through one estimator per drone connected by the
//! simulated network.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::estimator::{Estimate, Estimator, Event, InitState, Message, Pruning};
use crate::geometry::Pose4;
use crate::maploc::{Keyframe, Origin, PoseExtractor};
use crate::measurements::DistanceEdge;
use crate::netsim::{ClassStats, Fabric, MsgClass};
use crate::simworld::{hash_words, GroundTruth, LogRecord, MeasurementLog, OracleExtractor, Scenario};
use crate::{time_key, DroneId};

/// Which edge family to leave out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    NoUwb,
    NoDetection,
    NoMap,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoUwb, Ablation::NoDetection, Ablation::NoMap];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoUwb => "no-uwb",
            Ablation::NoDetection => "no-detection",
            Ablation::NoMap => "no-map",
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation {s:?}; expected full, no-uwb, no-detection or no-map"))
    }
}

/// Command-line style overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub ablation: Ablation,
    pub loss_uwb: Option<f64>,
    pub loss_vio: Option<f64>,
    pub m_max: Option<usize>,
    pub pruning: Option<Pruning>,
    pub packet_log: bool,
}

impl RunOptions {
    /// The scenario actually run.
    pub fn apply(&self, sc: &Scenario) -> Result<Scenario, EvalError> {
        let mut sc = sc.clone();
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(p) = self.loss_uwb {
            sc.network.drop_distance = p;
        }
        if let Some(p) = self.loss_vio {
            sc.network.drop_vio = p;
        }
        if let Some(m) = self.m_max {
            sc.estimator.m_max = m;
        }
        if let Some(p) = self.pruning {
            sc.estimator.pruning = p;
        }
        let edges = &mut sc.estimator.edges;
        match self.ablation {
            Ablation::Full => {}
            Ablation::NoUwb => edges.uwb = false,
            Ablation::NoDetection => edges.detection = false,
            Ablation::NoMap => edges.map = false,
        }
        sc.validate()?;
        Ok(sc)
    }
}

/// Everything a replay produced.
pub struct Replay {
    pub estimators: BTreeMap<DroneId, Estimator>,
    /// Observer → target → time key → estimate, one sample per master tick.
    pub estimates: BTreeMap<DroneId, BTreeMap<DroneId, BTreeMap<i64, Estimate>>>,
    pub init_time: BTreeMap<DroneId, f64>,
    pub network: BTreeMap<MsgClass, ClassStats>,
    pub packet_log: Option<Vec<u8>>,
    /// Injected UWB outliers as (i, j, time key).
    pub uwb_outliers: BTreeSet<(DroneId, DroneId, i64)>,
    pub oracle: Arc<OracleExtractor>,
    pub truth: Arc<GroundTruth>,
    /// Raw VIO of every drone per time key.
    pub vio: BTreeMap<DroneId, BTreeMap<i64, Pose4>>,
    /// Estimates served, over all observers and targets.
    pub updates: u64,
}

/// Seed of the relative pose oracle for a scenario seed.
pub fn oracle_seed(seed: u64) -> u64 {
    hash_words(&[seed, 0x0AC1_E5])
}

fn group_by_tick(log: &MeasurementLog) -> BTreeMap<i64, Vec<&LogRecord>> {
    let mut out: BTreeMap<i64, Vec<&LogRecord>> = BTreeMap::new();
    for r in &log.records {
        out.entry(time_key(r.t())).or_default().push(r);
    }
    out
}

/// Runs every drone's estimator over `log` with the network model and
/// estimator settings of `sc`.
pub fn replay(sc: &Scenario, log: &MeasurementLog, packet_log: bool) -> Result<Replay, EvalError> {
    let truth = Arc::new(GroundTruth::from_log(log));
    let oracle = Arc::new(OracleExtractor::new(Arc::clone(&truth), sc.oracle, oracle_seed(sc.seed)));
    let extractor: Arc<dyn PoseExtractor> = oracle.clone();

    let mut net_cfg = sc.network.clone();
    net_cfg.seed = hash_words(&[sc.seed, sc.network.seed, 0x4E7]);
    let mut fabric: Fabric<Message> = Fabric::new(net_cfg)?;
    if packet_log {
        fabric.enable_packet_log();
    }
    let mut estimators = BTreeMap::new();
    for d in &log.header.drones {
        fabric.register(d.id);
        estimators.insert(d.id, Estimator::new(d.id, sc.estimator.clone(), Some(Arc::clone(&extractor))));
    }

    let edges = sc.estimator.edges;
    let mut estimates: BTreeMap<DroneId, BTreeMap<DroneId, BTreeMap<i64, Estimate>>> = BTreeMap::new();
    let mut init_time = BTreeMap::new();
    let mut uwb_outliers = BTreeSet::new();
    let mut vio: BTreeMap<DroneId, BTreeMap<i64, Pose4>> = BTreeMap::new();
    let mut updates = 0u64;

    for (key, records) in group_by_tick(log) {
        let t = key as f64 * 1e-6;
        for (recipient, deliveries) in fabric.step(t)? {
            let Some(est) = estimators.get_mut(&recipient) else { continue };
            for d in deliveries {
                let out = est.ingest(Event::Remote((*d.envelope.payload).clone()));
                for m in out {
                    fabric.broadcast(recipient, t, m)?;
                }
            }
        }
        let mut active = BTreeSet::new();
        for rec in records {
            let (owner, event) = match rec {
                LogRecord::Gt { .. } => continue,
                LogRecord::Vio { t, ids, payload } => {
                    active.insert(ids[0]);
                    vio.entry(ids[0]).or_default().insert(key, payload.pose4);
                    (ids[0], Event::Vio { t: *t, pose4: payload.pose4, pose6: payload.pose6 })
                }
                LogRecord::Uwb { t, ids, payload } => {
                    if payload.outlier {
                        uwb_outliers.insert((ids[0], ids[1], key));
                    }
                    if !edges.uwb {
                        continue;
                    }
                    let e = DistanceEdge { i: ids[0], j: ids[1], t: *t, d: payload.d, sigma: payload.sigma };
                    (ids[0], Event::Distance(e))
                }
                LogRecord::Detection { t, ids, payload } => {
                    if !edges.detection {
                        continue;
                    }
                    (ids[0], Event::Detection(payload.to_observation(ids[0], *t)))
                }
                LogRecord::Keyframe { t, ids, payload } => {
                    let kf = Keyframe {
                        drone: ids[0],
                        t: *t,
                        vio4: payload.vio4,
                        vio6: payload.vio6,
                        descriptors: payload.descriptors.clone(),
                        origin: Origin::Local,
                    };
                    (ids[0], Event::Keyframe(kf))
                }
            };
            let Some(est) = estimators.get_mut(&owner) else { continue };
            for m in est.ingest(event) {
                fabric.broadcast(owner, t, m)?;
            }
        }
        for (id, est) in estimators.iter_mut() {
            est.advance(t);
            if est.init_state() == InitState::Initialized {
                init_time.entry(*id).or_insert(t);
            }
            if !active.contains(id) {
                continue;
            }
            let per_target = estimates.entry(*id).or_default();
            for d in est.known_drones() {
                if let Some(e) = est.estimate(d, t) {
                    per_target.entry(d).or_default().insert(key, e);
                    updates += 1;
                }
            }
        }
    }

    let network = MsgClass::ALL.into_iter().map(|c| (c, fabric.stats(c))).collect();
    Ok(Replay {
        estimators,
        estimates,
        init_time,
        network,
        packet_log: fabric.packet_log().map(<[u8]>::to_vec),
        uwb_outliers,
        oracle,
        truth,
        vio,
        updates,
    })
}
