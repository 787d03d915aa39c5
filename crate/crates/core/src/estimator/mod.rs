//! Per-drone swarm estimator.
//!
//! Each instance keeps a bounded pose graph of swarm frames expressed in the
//! VIO frame of its own first keyframe (the anchor). Frames are assembled at
//! a fixed rate, slightly delayed so that broadcasts for the same instant have
//! arrived. Once every drone in the graph is observable the graph is solved
//! after each new frame, and estimates are propagated with the latest VIO in
//! between.

mod config;
mod graph;
mod observability;
pub mod solver;
pub mod sparse;

pub use config::{EdgeSwitches, EstimatorConfig, Pruning};
pub use graph::{DetectionRecord, EstimatorGraph, FrameKeyframe, GraphMapEdge, MapKey, SwarmFrame, VarKey};
pub use observability::{check_observability, classify, Links, Observability, ObservabilityReport, PairEvidence};
pub use solver::{solve, Problem, SolveStats, SolverOptions, Termination};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{compose4, inverse4, lift_to_6dof, relative4, rotate_z, rotate_z_inv, Pose4, Pose6};
use crate::maploc::{Keyframe, MapLocalizer, PoseExtractor};
use crate::measurements::{
    make_odometry_edge, residual, DetectionObservation, DistanceEdge, MapEdge, MeasurementEdge,
};
use crate::netsim::{MsgClass, Payload};
use crate::{time_key, DroneId};

/// What drones broadcast to each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Vio { drone: DroneId, t: f64, pose4: Pose4, pose6: Pose6 },
    Distance(DistanceEdge),
    Detection(DetectionObservation),
    Keyframe(Keyframe),
    MapEdge(MapEdge),
}

impl Payload for Message {
    fn class(&self) -> MsgClass {
        match self {
            Message::Vio { .. } => MsgClass::Vio,
            Message::Distance(_) => MsgClass::Distance,
            Message::Detection(_) => MsgClass::Detection,
            Message::Keyframe(_) => MsgClass::Keyframe,
            Message::MapEdge(_) => MsgClass::MapEdge,
        }
    }

    fn size_bytes(&self) -> usize {
        match self {
            Message::Vio { .. } => 4 + 8 + 4 * 8 + 12 * 8,
            Message::Distance(_) => 8 + 8 + 8 + 8,
            Message::Detection(_) => 8 + 8 + 4 + 3 * 8 + 8 + 9 * 8 + 3 * 8 + 16,
            Message::Keyframe(k) => 4 + 8 + 16 * 8 + k.descriptors.iter().map(|d| 8 * d.len()).sum::<usize>(),
            Message::MapEdge(_) => 2 * 12 + 8 * 8 + 4,
        }
    }
}

/// Input to [`Estimator::ingest`]. Local events come from the drone's own
/// sensors and are re-broadcast; remote ones arrive over the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Vio { t: f64, pose4: Pose4, pose6: Pose6 },
    Distance(DistanceEdge),
    Detection(DetectionObservation),
    Keyframe(Keyframe),
    Remote(Message),
}

/// Quality tag of a published estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    /// Own pose before any optimization: VIO in the anchor frame.
    Odometry,
    /// Optimized keyframe pose propagated with fresh VIO.
    Propagated,
    /// Propagated with VIO older than the staleness limit.
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub drone: DroneId,
    /// Time the pose refers to: that of the newest VIO sample used.
    pub t: f64,
    pub pose4: Pose4,
    pub pose6: Pose6,
    pub status: EstimateStatus,
}

/// `P̂ ∘ (P̃_solve)⁻¹ ∘ P̃_now`.
pub fn propagate(optimized: &Pose4, vio_at_solve: &Pose4, vio_now: &Pose4) -> Pose4 {
    compose4(optimized, &relative4(vio_at_solve, vio_now))
}

/// The latest optimized keyframe of one drone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolvedKeyframe {
    pub t: f64,
    pub state: Pose4,
    pub vio4: Pose4,
}

/// Immutable result of one solve, safe to share with readers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub keyframes: BTreeMap<DroneId, SolvedKeyframe>,
}

impl Snapshot {
    pub fn propagate(&self, drone: DroneId, vio_now: &Pose4) -> Option<Pose4> {
        let k = self.keyframes.get(&drone)?;
        Some(propagate(&k.state, &k.vio4, vio_now))
    }
}

/// Picks the drone whose predicted bearing is closest to the detection,
/// provided it is within `theta`. Near-equal angles are split by how well
/// the predicted range matches the measured inverse depth.
pub fn associate_detection(
    obs: &DetectionObservation,
    observer: &Pose4,
    candidates: &[(DroneId, Pose4)],
    theta: f64,
) -> Option<DroneId> {
    let mut best: Option<(f64, f64, DroneId)> = None;
    for (id, p) in candidates {
        if *id == obs.observer {
            continue;
        }
        let v = rotate_z_inv(observer.yaw, &(p.translation() - observer.translation())) - obs.cam_pos;
        let range = v.norm();
        if range <= 0.0 {
            continue;
        }
        let angle = (v / range).dot(&obs.dir).clamp(-1.0, 1.0).acos();
        if angle >= theta {
            continue;
        }
        let mismatch = (1.0 / obs.inv_depth - range).abs();
        let better = match best {
            None => true,
            Some((a, m, _)) => angle < a - 1e-9 || ((angle - a).abs() <= 1e-9 && mismatch < m),
        };
        if better {
            best = Some((angle, mismatch, *id));
        }
    }
    best.map(|(_, _, id)| id)
}

/// Identity of an audited edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeId {
    Distance { i: DroneId, j: DroneId, t: i64 },
    Detection { observer: DroneId, t: i64, index: usize },
    Map { from: VarKey, to: VarKey },
}

/// Latest decision about an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDecision {
    Used,
    /// Forward and backward ranges disagree.
    Bidirectional,
    /// Estimated height difference too large for ranging.
    Height,
    /// Whitened residual above the threshold.
    Residual,
    /// Map edge translation above the limit.
    TooLong,
    /// Map edge endpoint has no nearby frame.
    Unresolved,
    /// Detection matched no drone.
    Unassociated,
}

impl EdgeDecision {
    pub fn rejected(self) -> bool {
        !matches!(self, EdgeDecision::Used)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorCounters {
    pub frames_considered: u64,
    pub keyframes: u64,
    pub pruned: u64,
    pub late_dropped: u64,
    pub duplicate_map_edges: u64,
    pub map_edges_generated: u64,
    pub init_attempts: u64,
    pub solves: u64,
    pub nonconverged: u64,
    pub diverged: u64,
}

/// Multi-start probes during initialization, or solves of the graph itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveKind {
    Restart,
    Graph,
}

/// Record of one solver call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub kind: SolveKind,
    pub t: f64,
    pub variables: usize,
    pub edges: usize,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitState {
    NotReady,
    Initialized,
}

/// Edges of one solve. Odometry edges carry no id and are never audited.
struct EdgeSet {
    ids: Vec<Option<EdgeId>>,
    edges: Vec<MeasurementEdge>,
}

/// One drone's estimator.
pub struct Estimator {
    id: DroneId,
    cfg: EstimatorConfig,
    extractor: Option<Arc<dyn PoseExtractor>>,
    maploc: MapLocalizer,
    vio: BTreeMap<DroneId, BTreeMap<i64, (Pose4, Pose6)>>,
    latest_vio: BTreeMap<DroneId, (f64, Pose4, Pose6)>,
    pending_distances: BTreeMap<i64, Vec<DistanceEdge>>,
    pending_detections: BTreeMap<i64, Vec<DetectionObservation>>,
    keyframe_ticks: BTreeSet<i64>,
    pending_map: BTreeMap<MapKey, MapEdge>,
    seen_map: BTreeSet<MapKey>,
    graph: EstimatorGraph,
    next_frame: Option<i64>,
    last_kf: BTreeMap<DroneId, Pose4>,
    last_frame_t: Option<f64>,
    levels: BTreeMap<DroneId, Observability>,
    initialized: BTreeSet<DroneId>,
    yaw_solved: BTreeSet<DroneId>,
    offsets: BTreeMap<DroneId, Pose4>,
    report: ObservabilityReport,
    prune_rng: ChaCha8Rng,
    init_rng: ChaCha8Rng,
    snapshot: Arc<Snapshot>,
    counters: EstimatorCounters,
    solve_log: Vec<SolveRecord>,
    audit: BTreeMap<EdgeId, EdgeDecision>,
    residual_mask: BTreeSet<EdgeId>,
}

impl std::fmt::Debug for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Estimator")
            .field("id", &self.id)
            .field("frames", &self.graph.len())
            .field("initialized", &self.initialized)
            .finish_non_exhaustive()
    }
}

impl Estimator {
    pub fn new(id: DroneId, cfg: EstimatorConfig, extractor: Option<Arc<dyn PoseExtractor>>) -> Self {
        let maploc = MapLocalizer::new(id, cfg.loops, cfg.sigmas.map_edge);
        let prune_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E0_0001);
        let init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1A1_7000 ^ u64::from(id));
        Estimator {
            id,
            cfg,
            extractor,
            maploc,
            vio: BTreeMap::new(),
            latest_vio: BTreeMap::new(),
            pending_distances: BTreeMap::new(),
            pending_detections: BTreeMap::new(),
            keyframe_ticks: BTreeSet::new(),
            pending_map: BTreeMap::new(),
            seen_map: BTreeSet::new(),
            graph: EstimatorGraph::default(),
            next_frame: None,
            last_kf: BTreeMap::new(),
            last_frame_t: None,
            levels: BTreeMap::new(),
            initialized: BTreeSet::new(),
            yaw_solved: BTreeSet::new(),
            offsets: BTreeMap::new(),
            report: ObservabilityReport::default(),
            prune_rng,
            init_rng,
            snapshot: Arc::new(Snapshot::default()),
            counters: EstimatorCounters::default(),
            solve_log: Vec::new(),
            audit: BTreeMap::new(),
            residual_mask: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> DroneId {
        self.id
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &EstimatorGraph {
        &self.graph
    }

    pub fn counters(&self) -> &EstimatorCounters {
        &self.counters
    }

    pub fn solve_log(&self) -> &[SolveRecord] {
        &self.solve_log
    }

    pub fn audit(&self) -> &BTreeMap<EdgeId, EdgeDecision> {
        &self.audit
    }

    pub fn observability(&self) -> &ObservabilityReport {
        &self.report
    }

    pub fn maploc(&self) -> &MapLocalizer {
        &self.maploc
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot)
    }

    pub fn init_state(&self) -> InitState {
        if self.initialized.contains(&self.id) {
            InitState::Initialized
        } else {
            InitState::NotReady
        }
    }

    pub fn is_initialized(&self, drone: DroneId) -> bool {
        self.initialized.contains(&drone)
    }

    fn frame_index(&self, t: f64) -> i64 {
        (t * self.cfg.frame_hz).round() as i64
    }

    fn frame_time(&self, idx: i64) -> f64 {
        idx as f64 / self.cfg.frame_hz
    }

    fn is_frame_tick(&self, t: f64) -> bool {
        let x = t * self.cfg.frame_hz;
        (x - x.round()).abs() < 1e-6
    }

    fn is_late(&mut self, t: f64) -> bool {
        let late = self.next_frame.is_some_and(|n| self.frame_index(t) < n);
        if late {
            self.counters.late_dropped += 1;
        }
        late
    }

    fn record_vio(&mut self, drone: DroneId, t: f64, pose4: Pose4, pose6: Pose6) {
        self.vio.entry(drone).or_default().insert(time_key(t), (pose4, pose6));
        let newer = self.latest_vio.get(&drone).is_none_or(|(lt, _, _)| t >= *lt);
        if newer {
            self.latest_vio.insert(drone, (t, pose4, pose6));
        }
    }

    /// Buffers one event. Returns the messages this drone should broadcast
    /// as a consequence.
    pub fn ingest(&mut self, event: Event) -> Vec<Message> {
        let mut out = Vec::new();
        match event {
            Event::Vio { t, pose4, pose6 } => {
                if self.next_frame.is_none() {
                    self.next_frame = Some((t * self.cfg.frame_hz - 1e-6).ceil() as i64);
                }
                self.record_vio(self.id, t, pose4, pose6);
                if self.is_frame_tick(t) {
                    out.push(Message::Vio { drone: self.id, t, pose4, pose6 });
                }
            }
            Event::Distance(e) => {
                if self.add_distance(e.clone()) {
                    out.push(Message::Distance(e));
                }
            }
            Event::Detection(o) => {
                if self.add_detection(o.clone()) {
                    out.push(Message::Detection(o));
                }
            }
            Event::Keyframe(kf) => {
                self.add_keyframe_info(&kf);
                if self.cfg.edges.map {
                    out.push(Message::Keyframe(kf.clone()));
                    out.extend(self.run_loop_detection(&kf).map(Message::MapEdge));
                }
            }
            Event::Remote(msg) => match msg {
                Message::Vio { drone, t, pose4, pose6 } => {
                    if drone != self.id {
                        self.record_vio(drone, t, pose4, pose6);
                    }
                }
                Message::Distance(e) => {
                    self.add_distance(e);
                }
                Message::Detection(o) => {
                    self.add_detection(o);
                }
                Message::Keyframe(kf) => {
                    if kf.drone != self.id && self.cfg.edges.map {
                        self.add_keyframe_info(&kf);
                        out.extend(self.run_loop_detection(&kf).map(Message::MapEdge));
                    }
                }
                Message::MapEdge(e) => {
                    if self.cfg.edges.map {
                        self.add_map_edge(e);
                    }
                }
            },
        }
        out
    }

    fn add_distance(&mut self, e: DistanceEdge) -> bool {
        if self.is_late(e.t) {
            return false;
        }
        let idx = self.frame_index(e.t);
        self.pending_distances.entry(idx).or_default().push(e);
        true
    }

    fn add_detection(&mut self, o: DetectionObservation) -> bool {
        if self.is_late(o.t) {
            return false;
        }
        let idx = self.frame_index(o.t);
        self.pending_detections.entry(idx).or_default().push(o);
        true
    }

    fn add_keyframe_info(&mut self, kf: &Keyframe) {
        self.record_vio(kf.drone, kf.t, kf.vio4, kf.vio6);
        if self.is_frame_tick(kf.t) {
            let idx = self.frame_index(kf.t);
            self.keyframe_ticks.insert(idx);
        }
    }

    fn run_loop_detection(&mut self, kf: &Keyframe) -> Option<MapEdge> {
        let extractor = self.extractor.clone()?;
        let (edge, _) = self.maploc.loop_detection(kf, extractor.as_ref());
        let edge = edge?;
        self.counters.map_edges_generated += 1;
        self.add_map_edge(edge.clone()).then_some(edge)
    }

    fn add_map_edge(&mut self, e: MapEdge) -> bool {
        let key = e.key();
        if !self.seen_map.insert(key) {
            self.counters.duplicate_map_edges += 1;
            return false;
        }
        let id = EdgeId::Map { from: key.0, to: key.1 };
        if e.rel.translation().norm() > self.cfg.loops.max_edge_len {
            self.audit.insert(id, EdgeDecision::TooLong);
            return true;
        }
        self.pending_map.insert(key, e);
        true
    }

    /// Processes every frame whose assembly time has passed.
    pub fn advance(&mut self, now: f64) {
        while let Some(idx) = self.next_frame {
            if self.frame_time(idx) + self.cfg.frame_delay > now + 1e-9 {
                break;
            }
            self.process_frame(idx);
            self.next_frame = Some(idx + 1);
        }
    }

    /// Keyframe policy over the VIO available at a frame tick.
    pub fn is_swarm_keyframe(&self, t: f64, vio: &BTreeMap<DroneId, FrameKeyframe>) -> bool {
        if self.last_frame_t.is_none_or(|lt| t - lt >= self.cfg.t_kf - 1e-9) {
            return true;
        }
        vio.iter().any(|(d, kf)| match self.last_kf.get(d) {
            None => true,
            Some(last) => {
                let rel = relative4(last, &kf.vio4);
                rel.translation().norm() > self.cfg.d_kf || rel.yaw.abs() > self.cfg.psi_kf
            }
        })
    }

    fn process_frame(&mut self, idx: i64) {
        self.counters.frames_considered += 1;
        let t = self.frame_time(idx);
        let key = time_key(t);
        let distances = self.pending_distances.remove(&idx).unwrap_or_default();
        let detections = self.pending_detections.remove(&idx).unwrap_or_default();
        let forced = self.keyframe_ticks.remove(&idx);
        self.pending_distances = self.pending_distances.split_off(&idx);
        self.pending_detections = self.pending_detections.split_off(&idx);
        self.keyframe_ticks = self.keyframe_ticks.split_off(&idx);

        let mut kfs: BTreeMap<DroneId, FrameKeyframe> = BTreeMap::new();
        for (d, stream) in &self.vio {
            if let Some((vio4, vio6)) = stream.get(&key) {
                kfs.insert(*d, FrameKeyframe { vio4: *vio4, vio6: *vio6 });
            }
        }
        if !kfs.contains_key(&self.id) {
            return;
        }
        if !forced && !self.is_swarm_keyframe(t, &kfs) {
            return;
        }
        self.counters.keyframes += 1;

        let distances: Vec<DistanceEdge> = distances
            .into_iter()
            .filter(|e| self.cfg.edges.uwb && kfs.contains_key(&e.i) && kfs.contains_key(&e.j) && e.i != e.j)
            .map(|mut e| {
                e.t = t;
                e
            })
            .collect();
        let detections: Vec<DetectionRecord> = detections
            .into_iter()
            .filter(|o| self.cfg.edges.detection && kfs.contains_key(&o.observer))
            .map(|mut o| {
                o.t = t;
                DetectionRecord { obs: o, target: None }
            })
            .collect();

        let mut odometry = Vec::new();
        let mut init = BTreeMap::new();
        for (d, kf) in &kfs {
            let prev = self.graph.prev_of(*d, key);
            let state = match prev {
                Some(pk) => {
                    let prev_kf = self.graph.keyframe(*d, pk).expect("variable has a frame");
                    let delta = relative4(&prev_kf.vio4, &kf.vio4);
                    let sigma = self.cfg.odometry_sigma(delta.translation().norm());
                    odometry.push(make_odometry_edge(*d, self.frame_time_of_key(pk), t, &prev_kf.vio4, &kf.vio4, sigma));
                    compose4(&self.graph.states[&(*d, pk)], &delta)
                }
                None => {
                    let offset = self.offsets.get(d).copied().unwrap_or_else(Pose4::identity);
                    compose4(&offset, &kf.vio4)
                }
            };
            init.insert(*d, state);
            self.last_kf.insert(*d, kf.vio4);
        }
        if self.graph.anchor.is_none() {
            self.graph.anchor = Some((self.id, key));
            init.insert(self.id, kfs[&self.id].vio4);
        }
        self.last_frame_t = Some(t);
        self.graph.insert_frame(
            SwarmFrame {
                t,
                keyframes: kfs,
                distances,
                detections,
            },
            odometry,
            &init,
        );

        let removed = self.graph.prune(self.cfg.m_max, self.cfg.pruning, &mut self.prune_rng);
        self.counters.pruned += removed.len() as u64;
        self.attach_map_edges(t);
        self.associate_all();
        self.update_observability(t);
        self.try_initialize(t);
        if self.initialized.contains(&self.id) {
            self.optimize(t);
        }
    }

    fn frame_time_of_key(&self, key: i64) -> f64 {
        self.graph.frames[&key].t
    }

    /// VIO of `drone` at `key` from the graph or from the buffered streams.
    fn vio_at(&self, drone: DroneId, key: i64) -> Option<Pose4> {
        self.graph
            .keyframe(drone, key)
            .map(|k| k.vio4)
            .or_else(|| self.vio.get(&drone)?.get(&key).map(|v| v.0))
    }

    /// Moves a map edge endpoint onto the closest frame of the same drone.
    /// Returns the new key and the VIO relative pose from the old endpoint to
    /// the new one.
    fn reanchor(&self, (drone, key): VarKey) -> Option<(VarKey, Pose4)> {
        if self.graph.has_var((drone, key)) {
            return Some(((drone, key), Pose4::identity()));
        }
        let gap = time_key(self.cfg.reanchor_gap);
        let before = self.graph.prev_of(drone, key);
        let after = self.graph.next_of(drone, key);
        let best = [before, after]
            .into_iter()
            .flatten()
            .filter(|k| (k - key).abs() <= gap)
            .min_by_key(|k| (k - key).abs())?;
        let v_old = self.vio_at(drone, key)?;
        let v_new = self.vio_at(drone, best)?;
        Some(((drone, best), relative4(&v_old, &v_new)))
    }

    fn attach_map_edges(&mut self, t: f64) {
        let now = time_key(t);
        let ready: Vec<MapKey> = self
            .pending_map
            .keys()
            .filter(|(a, b)| a.1 <= now && b.1 <= now)
            .copied()
            .collect();
        for key in ready {
            let e = self.pending_map.remove(&key).expect("key from map");
            let id = EdgeId::Map { from: key.0, to: key.1 };
            let (Some((from, lead)), Some((to, trail))) = (self.reanchor(key.0), self.reanchor(key.1)) else {
                self.audit.insert(id, EdgeDecision::Unresolved);
                continue;
            };
            if from == to {
                self.audit.insert(id, EdgeDecision::Unresolved);
                continue;
            }
            let rel = compose4(&compose4(&inverse4(&lead), &e.rel), &trail);
            let mut sigma = e.sigma;
            for moved in [lead, trail] {
                let extra = self.cfg.odometry_sigma(moved.translation().norm());
                if moved != Pose4::identity() {
                    for k in 0..4 {
                        sigma[k] = sigma[k].hypot(extra[k]);
                    }
                }
            }
            let edge = MapEdge {
                from: (from.0, self.frame_time_of_key(from.1)),
                to: (to.0, self.frame_time_of_key(to.1)),
                rel,
                sigma,
                inliers: e.inliers,
            };
            let new_key = edge.key();
            if self.graph.map_edges.contains_key(&new_key) {
                self.counters.duplicate_map_edges += 1;
                continue;
            }
            self.audit.insert(id, EdgeDecision::Used);
            self.graph.map_edges.insert(new_key, GraphMapEdge { origin: key, edge });
        }
    }

    /// Detection targets: the detector's label until this drone is
    /// initialized, nearest predicted bearing afterwards.
    fn associate_all(&mut self) {
        let initialized = self.initialized.contains(&self.id);
        let theta = self.cfg.theta_assoc;
        let states = &self.graph.states;
        let ready = &self.initialized;
        for (key, frame) in self.graph.frames.iter_mut() {
            let present: Vec<(DroneId, Pose4)> = frame
                .keyframes
                .keys()
                .filter(|d| ready.contains(d))
                .map(|d| (*d, states[&(*d, *key)]))
                .collect();
            for rec in frame.detections.iter_mut() {
                rec.target = if initialized && ready.contains(&rec.obs.observer) {
                    let observer = states[&(rec.obs.observer, *key)];
                    associate_detection(&rec.obs, &observer, &present, theta)
                } else {
                    rec.obs
                        .label
                        .filter(|l| *l != rec.obs.observer && frame.keyframes.contains_key(l))
                };
            }
        }
    }

    fn bidirectional_rejects(&self) -> BTreeSet<EdgeId> {
        let mut out = BTreeSet::new();
        for (key, frame) in &self.graph.frames {
            let mut by_pair: BTreeMap<(DroneId, DroneId), f64> = BTreeMap::new();
            for e in &frame.distances {
                by_pair.insert((e.i, e.j), e.d);
            }
            for (&(i, j), &d) in &by_pair {
                if let Some(&back) = by_pair.get(&(j, i)) {
                    if (d - back).abs() > self.cfg.tau_bidir {
                        out.insert(EdgeId::Distance { i, j, t: *key });
                    }
                }
            }
        }
        out
    }

    fn links(&self, t: f64) -> Links {
        let mut links = Links::default();
        let rejected = self.bidirectional_rejects();
        let from = time_key(t - self.cfg.motion_window);
        let step = time_key(1.0 / self.cfg.frame_hz).max(1);
        for (d, stream) in &self.vio {
            let mut path = 0.0;
            let mut prev: Option<Pose4> = None;
            for (k, (p, _)) in stream.range(from..=time_key(t)) {
                if k % step != 0 {
                    continue;
                }
                if let Some(q) = prev {
                    path += (p.translation() - q.translation()).norm();
                }
                prev = Some(*p);
            }
            if path > self.cfg.d_mot {
                links.motion.insert(*d);
            }
        }
        for (key, frame) in &self.graph.frames {
            for e in &frame.distances {
                if !rejected.contains(&EdgeId::Distance { i: e.i, j: e.j, t: *key }) {
                    links.add_distance(e.i, e.j);
                }
            }
            for rec in &frame.detections {
                if let Some(target) = rec.target {
                    links.add_detection(rec.obs.observer, target);
                }
            }
        }
        for k in self.graph.map_edges.keys() {
            links.add_map(k.0 .0, k.1 .0);
        }
        links
    }

    fn update_observability(&mut self, t: f64) {
        let links = self.links(t);
        let drones = self.graph.drones();
        let report = check_observability(self.id, &drones, &links);
        for (d, level) in &report.drones {
            let e = self.levels.entry(*d).or_default();
            *e = (*e).max(*level);
        }
        self.report = report;
    }

    fn level(&self, d: DroneId) -> Observability {
        if d == self.id {
            return Observability::Dof6;
        }
        self.levels.get(&d).copied().unwrap_or_default()
    }

    fn try_initialize(&mut self, t: f64) {
        let drones = self.graph.drones();
        let others: BTreeSet<DroneId> = drones.iter().copied().filter(|d| *d != self.id).collect();
        if !self.initialized.contains(&self.id) {
            if others.iter().any(|d| self.level(*d) == Observability::None) {
                return;
            }
            self.counters.init_attempts += 1;
            if others.is_empty() || self.restarts(&others, &BTreeSet::new(), t) {
                self.initialized.insert(self.id);
                self.initialized.extend(others.iter().copied());
                self.mark_yaw_solved();
            }
            return;
        }
        let newcomers: BTreeSet<DroneId> = others
            .iter()
            .copied()
            .filter(|d| !self.initialized.contains(d) && self.level(*d) > Observability::None)
            .collect();
        let upgraded: BTreeSet<DroneId> = others
            .iter()
            .copied()
            .filter(|d| {
                self.initialized.contains(d) && !self.yaw_solved.contains(d) && self.level(*d) == Observability::Dof6
            })
            .collect();
        if newcomers.is_empty() && upgraded.is_empty() {
            return;
        }
        self.counters.init_attempts += 1;
        if self.restarts(&newcomers, &upgraded, t) {
            self.initialized.extend(newcomers);
            self.mark_yaw_solved();
        }
    }

    fn mark_yaw_solved(&mut self) {
        for d in self.initialized.clone() {
            if self.level(d) == Observability::Dof6 {
                self.yaw_solved.insert(d);
            }
        }
    }

    /// Latest graph variable of a drone.
    fn latest_var(&self, d: DroneId) -> Option<(i64, Pose4)> {
        self.graph
            .states
            .range((d, i64::MIN)..=(d, i64::MAX))
            .next_back()
            .map(|((_, k), p)| (*k, *p))
    }

    /// Offset candidate for `d` implied by a map edge to an already
    /// initialized drone.
    fn map_seed(&self, d: DroneId, known: &BTreeSet<DroneId>) -> Option<Pose4> {
        for (key, m) in &self.graph.map_edges {
            let (a, b) = *key;
            let (state_d, vio_key) = if b.0 == d && known.contains(&a.0) {
                (compose4(&self.graph.states[&a], &m.edge.rel), b)
            } else if a.0 == d && known.contains(&b.0) {
                (compose4(&self.graph.states[&b], &inverse4(&m.edge.rel)), a)
            } else {
                continue;
            };
            let vio = self.graph.keyframe(d, vio_key.1)?.vio4;
            return Some(compose4(&state_d, &inverse4(&vio)));
        }
        None
    }

    /// Position of `d` at the newest frame holding an associated detection
    /// between `d` and a known drone, given a yaw for `d`. The known side
    /// uses its current state.
    fn detection_seed(&self, d: DroneId, known: &BTreeSet<DroneId>, yaw: f64) -> Option<(i64, Vector3<f64>)> {
        for (key, frame) in self.graph.frames.iter().rev() {
            for rec in &frame.detections {
                let Some(target) = rec.target else { continue };
                let o = &rec.obs;
                if !(o.inv_depth > 0.0) {
                    continue;
                }
                let body = o.cam_pos + o.dir / o.inv_depth;
                if target == d && known.contains(&o.observer) {
                    let a = self.graph.states.get(&(o.observer, *key))?;
                    return Some((*key, a.translation() + rotate_z(a.yaw, &body)));
                }
                if o.observer == d && known.contains(&target) {
                    let b = self.graph.states.get(&(target, *key))?;
                    return Some((*key, b.translation() - rotate_z(yaw, &body)));
                }
            }
        }
        None
    }

    fn apply_offset(&mut self, d: DroneId, offset: &Pose4) {
        for k in self.graph.frames_of(d) {
            let vio = self.graph.keyframe(d, k).expect("variable has a frame").vio4;
            self.graph.states.insert((d, k), compose4(offset, &vio));
        }
    }

    /// Multi-start initialization of `fresh` drones (position and yaw) and
    /// `reyaw` drones (yaw only). Keeps the lowest-cost result.
    fn restarts(&mut self, fresh: &BTreeSet<DroneId>, reyaw: &BTreeSet<DroneId>, t: f64) -> bool {
        let mut known: BTreeSet<DroneId> = self.initialized.clone();
        known.insert(self.id);
        let mut targets: BTreeSet<DroneId> = fresh.clone();
        targets.extend(reyaw.iter().copied());

        let radius = self
            .graph
            .frames
            .values()
            .flat_map(|f| f.distances.iter().map(|e| e.d))
            .fold(0.0, f64::max);
        let radius = if radius > 0.0 { radius } else { self.cfg.loops.max_edge_len };
        let (_, self_latest) = self.latest_var(self.id).expect("self has a variable");

        let mut candidates: Vec<BTreeMap<DroneId, Pose4>> = Vec::new();
        let seeded: BTreeMap<DroneId, Pose4> = targets
            .iter()
            .filter_map(|d| self.map_seed(*d, &known).map(|o| (*d, o)))
            .collect();
        if !seeded.is_empty() {
            let mut c = seeded;
            for d in &targets {
                c.entry(*d).or_insert_with(|| self.offsets.get(d).copied().unwrap_or_else(Pose4::identity));
            }
            candidates.push(c);
        }
        for n in 0..self.cfg.n_init {
            let mut c = BTreeMap::new();
            for &d in &targets {
                let (mut k, current) = self.latest_var(d).expect("target has a variable");
                let yaw = self.init_rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let pos = if !fresh.contains(&d) {
                    current.translation()
                } else if let Some((key, p)) = (n % 2 == 0).then(|| self.detection_seed(d, &known, yaw)).flatten() {
                    k = key;
                    p
                } else {
                    self_latest.translation() + random_in_ball(&mut self.init_rng, radius)
                };
                let vio = self.graph.keyframe(d, k).expect("variable has a frame").vio4;
                let state = Pose4::from_translation(pos, yaw);
                c.insert(d, compose4(&state, &inverse4(&vio)));
            }
            candidates.push(c);
        }

        let saved = self.graph.states.clone();
        let mut best: Option<(f64, BTreeMap<VarKey, Pose4>)> = None;
        let mut participants = known.clone();
        participants.extend(targets.iter().copied());
        for c in candidates {
            self.graph.states = saved.clone();
            for (d, off) in &c {
                self.apply_offset(*d, off);
            }
            let frozen: BTreeSet<DroneId> = participants
                .iter()
                .copied()
                .filter(|d| self.level(*d) < Observability::Dof6)
                .collect();
            let set = self.edge_set(&participants, false);
            let (stats, states) = self.solve_set(&set, &participants, &frozen);
            self.solve_log.push(SolveRecord {
                kind: SolveKind::Restart,
                t,
                variables: states.len(),
                edges: set.edges.len(),
                stats,
            });
            if stats.termination == Termination::Diverged || !stats.final_cost.is_finite() {
                continue;
            }
            if behind_camera(&set, &states) {
                continue;
            }
            if best.as_ref().is_none_or(|(c, _)| stats.final_cost < *c) {
                let mut full = saved.clone();
                full.extend(states);
                best = Some((stats.final_cost, full));
            }
        }
        match best {
            Some((_, states)) => {
                self.graph.states = states;
                self.refresh_offsets();
                true
            }
            None => {
                self.graph.states = saved;
                false
            }
        }
    }

    /// Edges among `participants`, minus structural rejections and, if
    /// `masked`, minus the residual mask. Updates the audit.
    fn edge_set(&mut self, participants: &BTreeSet<DroneId>, masked: bool) -> EdgeSet {
        let bidir = self.bidirectional_rejects();
        let mut ids = Vec::new();
        let mut edges = Vec::new();
        let ok = |k: &VarKey| participants.contains(&k.0);
        for (key, e) in &self.graph.odometry {
            if ok(key) {
                ids.push(None);
                edges.push(MeasurementEdge::Odometry(e.clone()));
            }
        }
        let mut decisions = Vec::new();
        for (key, frame) in &self.graph.frames {
            for e in &frame.distances {
                if !(ok(&(e.i, *key)) && ok(&(e.j, *key))) {
                    continue;
                }
                let id = EdgeId::Distance { i: e.i, j: e.j, t: *key };
                if bidir.contains(&id) {
                    decisions.push((id, EdgeDecision::Bidirectional));
                    continue;
                }
                if masked {
                    let dz = self.graph.states[&(e.i, *key)].z - self.graph.states[&(e.j, *key)].z;
                    if dz.abs() > self.cfg.h_max {
                        decisions.push((id, EdgeDecision::Height));
                        continue;
                    }
                }
                ids.push(Some(id));
                edges.push(MeasurementEdge::Distance(e.clone()));
            }
            for (index, rec) in frame.detections.iter().enumerate() {
                let id = EdgeId::Detection { observer: rec.obs.observer, t: *key, index };
                match rec.target {
                    Some(target) if ok(&(rec.obs.observer, *key)) && ok(&(target, *key)) => {
                        ids.push(Some(id));
                        edges.push(MeasurementEdge::Detection(rec.obs.with_target(target)));
                    }
                    Some(_) => {}
                    None => decisions.push((id, EdgeDecision::Unassociated)),
                }
            }
        }
        for m in self.graph.map_edges.values() {
            let (a, b) = m.edge.key();
            if ok(&a) && ok(&b) {
                ids.push(Some(EdgeId::Map { from: m.origin.0, to: m.origin.1 }));
                edges.push(MeasurementEdge::Map(m.edge.clone()));
            }
        }
        if masked {
            self.audit.extend(decisions);
        }
        let mut set = EdgeSet { ids: Vec::new(), edges: Vec::new() };
        for (id, e) in ids.into_iter().zip(edges) {
            let [a, b] = e.endpoints();
            let present = self.graph.has_var((a.0, time_key(a.1))) && self.graph.has_var((b.0, time_key(b.1)));
            let masked_out = masked && id.is_some_and(|id| self.residual_mask.contains(&id));
            if present && !masked_out {
                set.ids.push(id);
                set.edges.push(e);
            }
        }
        set
    }

    /// Solves over the variables of `participants`; the anchor is fixed.
    /// Returns the stats and the solved states.
    fn solve_set(
        &self,
        set: &EdgeSet,
        participants: &BTreeSet<DroneId>,
        frozen: &BTreeSet<DroneId>,
    ) -> (SolveStats, BTreeMap<VarKey, Pose4>) {
        let keys: Vec<VarKey> = self
            .graph
            .states
            .keys()
            .filter(|k| participants.contains(&k.0))
            .copied()
            .collect();
        let pos: BTreeMap<VarKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut p = Problem::new(keys.iter().map(|k| self.graph.states[k]).collect());
        for (i, k) in keys.iter().enumerate() {
            p.fixed[i] = Some(*k) == self.graph.anchor;
            p.frozen_yaw[i] = frozen.contains(&k.0);
        }
        for e in &set.edges {
            let [a, b] = e.endpoints();
            p.edges.push((pos[&(a.0, time_key(a.1))], pos[&(b.0, time_key(b.1))], e));
        }
        let stats = solve(&mut p, &self.cfg.solver);
        let states = keys.into_iter().zip(p.states).collect();
        (stats, states)
    }

    fn optimize(&mut self, t: f64) {
        let participants = self.initialized.clone();
        let frozen: BTreeSet<DroneId> = participants
            .iter()
            .copied()
            .filter(|d| !self.yaw_solved.contains(d) && *d != self.id)
            .collect();
        let all = self.edge_set(&participants, false);
        for round in 0..3 {
            let set = self.edge_set(&participants, true);
            let (stats, states) = self.solve_set(&set, &participants, &frozen);
            self.counters.solves += 1;
            if !stats.converged() {
                self.counters.nonconverged += 1;
            }
            self.solve_log.push(SolveRecord {
                kind: SolveKind::Graph,
                t,
                variables: states.len(),
                edges: set.edges.len(),
                stats,
            });
            if stats.termination == Termination::Diverged {
                self.counters.diverged += 1;
                break;
            }
            self.graph.states.extend(states);
            let mask = self.residual_rejects(&all);
            let changed = mask != self.residual_mask;
            self.residual_mask = mask;
            if !changed || round == 2 {
                break;
            }
        }
        self.record_decisions(&participants);
        self.refresh_offsets();
        self.publish(t);
    }

    fn residual_rejects(&self, set: &EdgeSet) -> BTreeSet<EdgeId> {
        let tau2 = self.cfg.tau_res * self.cfg.tau_res;
        let mut out = BTreeSet::new();
        for (id, e) in set.ids.iter().zip(&set.edges) {
            let Some(id) = id else { continue };
            let [a, b] = e.endpoints();
            let (Some(pa), Some(pb)) = (
                self.graph.states.get(&(a.0, time_key(a.1))),
                self.graph.states.get(&(b.0, time_key(b.1))),
            ) else {
                continue;
            };
            if let Ok(r) = residual(e, pa, pb) {
                if r.squared_norm() > tau2 {
                    out.insert(*id);
                }
            }
        }
        out
    }

    fn record_decisions(&mut self, participants: &BTreeSet<DroneId>) {
        let set = self.edge_set(participants, true);
        for id in set.ids.into_iter().flatten() {
            self.audit.insert(id, EdgeDecision::Used);
        }
        for id in &self.residual_mask {
            self.audit.insert(*id, EdgeDecision::Residual);
        }
    }

    fn refresh_offsets(&mut self) {
        for d in self.graph.drones() {
            if let Some((k, state)) = self.latest_var(d) {
                let vio = self.graph.keyframe(d, k).expect("variable has a frame").vio4;
                self.offsets.insert(d, compose4(&state, &inverse4(&vio)));
            }
        }
    }

    fn publish(&mut self, t: f64) {
        let mut keyframes = BTreeMap::new();
        for &d in &self.initialized {
            if let Some((k, state)) = self.latest_var(d) {
                let vio4 = self.graph.keyframe(d, k).expect("variable has a frame").vio4;
                keyframes.insert(d, SolvedKeyframe { t: self.frame_time_of_key(k), state, vio4 });
            }
        }
        self.snapshot = Arc::new(Snapshot { t, keyframes });
    }

    /// Optimized graph pose of a variable.
    pub fn state(&self, drone: DroneId, t: f64) -> Option<Pose4> {
        self.graph.states.get(&(drone, time_key(t))).copied()
    }

    /// Current estimate of `drone` at `now` in this drone's anchor frame.
    pub fn estimate(&self, drone: DroneId, now: f64) -> Option<Estimate> {
        let (vt, vio4, vio6) = *self.latest_vio.get(&drone)?;
        let (pose4, status) = match self.snapshot.propagate(drone, &vio4) {
            Some(p) if now - vt > self.cfg.t_stale => (p, EstimateStatus::Stale),
            Some(p) => (p, EstimateStatus::Propagated),
            None if drone == self.id => (vio4, EstimateStatus::Odometry),
            None => return None,
        };
        Some(Estimate {
            drone,
            t: vt,
            pose4,
            pose6: lift_to_6dof(&pose4, &vio6, &vio4),
            status,
        })
    }

    /// Drones this instance currently publishes estimates for.
    pub fn known_drones(&self) -> BTreeSet<DroneId> {
        let mut s: BTreeSet<DroneId> = self.snapshot.keyframes.keys().copied().collect();
        s.insert(self.id);
        s
    }

    /// Robust cost of the current graph with the current masks.
    pub fn graph_cost(&mut self) -> f64 {
        let participants = self.initialized.clone();
        let set = self.edge_set(&participants, true);
        let keys: Vec<VarKey> = self.graph.states.keys().filter(|k| participants.contains(&k.0)).copied().collect();
        let pos: BTreeMap<VarKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut p = Problem::new(keys.iter().map(|k| self.graph.states[k]).collect());
        for e in &set.edges {
            let [a, b] = e.endpoints();
            p.edges.push((pos[&(a.0, time_key(a.1))], pos[&(b.0, time_key(b.1))], e));
        }
        p.cost(&p.states, self.cfg.solver.huber_delta)
    }

    /// Re-solves the current graph without new data.
    pub fn resolve(&mut self) -> Option<SolveStats> {
        if !self.initialized.contains(&self.id) {
            return None;
        }
        let t = self.last_frame_t.unwrap_or(0.0);
        self.optimize(t);
        self.solve_log.last().map(|r| r.stats)
    }
}

/// True if some detection in `set` predicts its target in the half space
/// behind the measured bearing. The bearing residual vanishes there too.
fn behind_camera(set: &EdgeSet, states: &BTreeMap<VarKey, Pose4>) -> bool {
    set.edges.iter().any(|e| {
        let MeasurementEdge::Detection(d) = e else { return false };
        let (Some(a), Some(b)) = (
            states.get(&(d.observer, time_key(d.t))),
            states.get(&(d.target, time_key(d.t))),
        ) else {
            return false;
        };
        let p = rotate_z_inv(a.yaw, &(b.translation() - a.translation())) - d.cam_pos;
        p.dot(&d.dir) <= 0.0
    })
}

fn random_in_ball(rng: &mut impl Rng, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rot3;

    fn obs(dir: Vector3<f64>, range: f64) -> DetectionObservation {
        DetectionObservation {
            observer: 0,
            t: 0.0,
            label: None,
            dir: dir.normalize(),
            inv_depth: 1.0 / range,
            cam_rot: Rot3::identity(),
            cam_pos: Vector3::zeros(),
            sigma_dir: 0.02,
            sigma_inv_depth: 0.01,
        }
    }

    #[test]
    fn association_picks_aligned_drone() {
        let o = obs(Vector3::new(1.0, 0.0, 0.0), 3.0);
        let yaw = 1f64.to_radians();
        let cands = [(1, Pose4::new(3.0 * yaw.cos(), 3.0 * yaw.sin(), 0.0, 0.0))];
        assert_eq!(associate_detection(&o, &Pose4::identity(), &cands, 10f64.to_radians()), Some(1));
    }

    #[test]
    fn association_rejects_far_bearings() {
        let o = obs(Vector3::new(1.0, 0.0, 0.0), 3.0);
        let cands = [(1, Pose4::new(0.0, 3.0, 0.0, 0.0)), (2, Pose4::new(-3.0, 0.0, 0.0, 0.0))];
        assert_eq!(associate_detection(&o, &Pose4::identity(), &cands, 10f64.to_radians()), None);
    }

    #[test]
    fn association_prefers_smaller_angle() {
        let o = obs(Vector3::new(1.0, 0.0, 0.0), 3.0);
        let at = |deg: f64| {
            let a = deg.to_radians();
            Pose4::new(3.0 * a.cos(), 3.0 * a.sin(), 0.0, 0.0)
        };
        let cands = [(2, at(9.9)), (1, at(2.0))];
        assert_eq!(associate_detection(&o, &Pose4::identity(), &cands, 10f64.to_radians()), Some(1));
    }

    #[test]
    fn association_ties_go_to_range_match() {
        let o = obs(Vector3::new(1.0, 0.0, 0.0), 3.0);
        let cands = [(1, Pose4::new(5.0, 0.0, 0.0, 0.0)), (2, Pose4::new(3.1, 0.0, 0.0, 0.0))];
        assert_eq!(associate_detection(&o, &Pose4::identity(), &cands, 10f64.to_radians()), Some(2));
    }

    #[test]
    fn association_uses_observer_yaw() {
        let o = obs(Vector3::new(1.0, 0.0, 0.0), 2.0);
        let observer = Pose4::new(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let cands = [(1, Pose4::new(0.0, 2.0, 0.0, 0.0))];
        assert_eq!(associate_detection(&o, &observer, &cands, 10f64.to_radians()), Some(1));
    }

    #[test]
    fn propagation_cases() {
        let p = Pose4::new(1.0, 2.0, 3.0, 0.4);
        let v = Pose4::new(-2.0, 0.5, 1.0, -1.0);
        assert_eq!(propagate(&p, &v, &v).max_diff(&p), 0.0);
        let moved = propagate(&Pose4::identity(), &Pose4::identity(), &Pose4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(moved, Pose4::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn keyframe_policy() {
        let mut est = Estimator::new(0, EstimatorConfig::default(), None);
        let kf = |x: f64| FrameKeyframe { vio4: Pose4::new(x, 0.0, 0.0, 0.0), vio6: Pose6::identity() };
        let mut vio = BTreeMap::new();
        vio.insert(0, kf(0.0));
        assert!(est.is_swarm_keyframe(0.0, &vio), "first frame");
        est.last_frame_t = Some(0.0);
        est.last_kf.insert(0, Pose4::identity());
        assert!(!est.is_swarm_keyframe(1.0, &vio), "static before T_kf");
        vio.insert(0, kf(0.5));
        assert!(est.is_swarm_keyframe(1.0, &vio), "moved beyond d_kf");
        vio.insert(0, kf(0.0));
        assert!(est.is_swarm_keyframe(2.0, &vio), "time trigger");
        vio.insert(1, kf(0.0));
        assert!(est.is_swarm_keyframe(0.5, &vio), "new drone");
    }

    #[test]
    fn late_events_are_counted() {
        let mut est = Estimator::new(0, EstimatorConfig::default(), None);
        est.ingest(Event::Vio { t: 0.0, pose4: Pose4::identity(), pose6: Pose6::identity() });
        est.ingest(Event::Vio { t: 0.5, pose4: Pose4::identity(), pose6: Pose6::identity() });
        est.advance(0.5);
        let e = DistanceEdge { i: 0, j: 1, t: 0.1, d: 1.0, sigma: 0.1 };
        assert!(est.ingest(Event::Distance(e)).is_empty());
        assert_eq!(est.counters().late_dropped, 1);
    }
}
