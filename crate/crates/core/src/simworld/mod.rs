//! Synthetic world: ground-truth trajectories and the sensor streams a swarm
//! would observe, with seeded noise and labelled outlier injection.
//!
//! Every random stream is derived from the scenario seed and a stream tag, so
//! a scenario always produces the same measurement log byte for byte.

mod descriptor;
mod log;
mod oracle;
mod sensors;
mod trajectory;

pub use descriptor::{DescriptorConfig, DescriptorField};
pub use log::{
    DetectionPayload, DroneInfo, KeyframePayload, LogHeader, LogRecord, MeasurementLog,
    UwbPayload, VioPayload,
};
pub use oracle::{extract_relative_pose_oracle, OracleConfig, OracleExtractor, OracleSample};
pub use sensors::{
    in_dead_zone, make_keyframe, simulate_detections, simulate_uwb, simulate_vio, DetectionSample,
    UwbSample, VioSample,
};
pub use trajectory::{Kinematics, Trajectory, TrajectorySpec};

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::EstimatorConfig;
use crate::geometry::{Pose4, Pose6};
use crate::measurements::DroneGeometry;
use crate::netsim::ChannelConfig;
use crate::DroneId;

pub(crate) use descriptor::hash_words;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible trajectory: {0}")]
    InfeasibleTrajectory(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad log record on line {line}: {source}")]
    Log {
        line: usize,
        source: serde_json::Error,
    },
}

/// Sensor rates. All periods must be whole multiples of the master tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    /// Ground truth and VIO rate, Hz.
    pub master_hz: f64,
    pub uwb_hz: f64,
    pub detection_hz: f64,
    /// Seconds between keyframes of one drone.
    pub keyframe_period: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            master_hz: 100.0,
            uwb_hz: 10.0,
            detection_hz: 10.0,
            keyframe_period: 1.0,
        }
    }
}

impl Rates {
    fn ticks_per(&self, period: f64, what: &str) -> Result<u64, SimError> {
        let k = period * self.master_hz;
        if !(k >= 1.0 - 1e-9) || (k - k.round()).abs() > 1e-6 {
            return Err(SimError::InvalidScenario(format!(
                "{what} period {period} s is not a multiple of the master tick"
            )));
        }
        Ok(k.round() as u64)
    }
}

/// Actual sensor noise of the simulated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-step position std-dev as a fraction of step length.
    pub vio_pos_frac: f64,
    /// Per-step position std-dev per sqrt(meter).
    pub vio_pos_density: f64,
    /// Per-step yaw std-dev per meter travelled.
    pub vio_yaw_frac: f64,
    /// Per-step yaw std-dev per sqrt(meter).
    pub vio_yaw_density: f64,
    /// Std-dev of each drone's constant VIO scale error.
    pub vio_scale_bias: f64,
    /// Std-dev of each drone's constant yaw drift, radians per meter.
    pub vio_yaw_bias: f64,
    pub uwb_sigma: f64,
    pub det_sigma_dir: f64,
    /// Multiplicative inverse-depth noise.
    pub det_inv_depth_frac: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            vio_pos_frac: 0.005,
            vio_pos_density: 0.0,
            vio_yaw_frac: 0.0,
            vio_yaw_density: 0.002,
            vio_scale_bias: 0.01,
            vio_yaw_bias: 0.0005,
            uwb_sigma: 0.15,
            det_sigma_dir: 0.02,
            det_inv_depth_frac: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        NoiseConfig {
            vio_pos_frac: 0.0,
            vio_pos_density: 0.0,
            vio_yaw_frac: 0.0,
            vio_yaw_density: 0.0,
            vio_scale_bias: 0.0,
            vio_yaw_bias: 0.0,
            uwb_sigma: 0.0,
            det_sigma_dir: 0.0,
            det_inv_depth_frac: 0.0,
        }
    }
}

/// Injected gross errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    pub uwb_prob: f64,
    /// Range of the positive bias added to an outlier range, meters.
    pub uwb_min: f64,
    pub uwb_max: f64,
    /// Probability a detection carries the wrong identity.
    pub misassoc_rate: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            uwb_prob: 0.0,
            uwb_min: 0.5,
            uwb_max: 3.0,
            misassoc_rate: 0.0,
        }
    }
}

/// Simulated detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub enabled: bool,
    /// Half-angle of the blind cone below the drone, radians.
    pub dead_zone_half_angle: f64,
    pub max_range: f64,
    pub geometry: DroneGeometry,
    /// Camera centre in the body frame.
    pub cam_pos: [f64; 3],
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            enabled: true,
            dead_zone_half_angle: 30f64.to_radians(),
            max_range: 8.0,
            geometry: DroneGeometry::default(),
            cam_pos: [0.0; 3],
        }
    }
}

/// One drone of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneSpec {
    pub id: DroneId,
    /// Power-on time, seconds.
    #[serde(default)]
    pub start: f64,
    /// Power-off time; runs to the end when absent.
    #[serde(default)]
    pub stop: Option<f64>,
    #[serde(default = "yes")]
    pub uwb: bool,
    #[serde(default = "yes")]
    pub camera: bool,
    pub trajectory: TrajectorySpec,
}

fn yes() -> bool {
    true
}

/// A complete experiment description, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    /// Speed bound used to validate trajectories, m/s.
    pub v_max: f64,
    pub rates: Rates,
    pub noise: NoiseConfig,
    pub outliers: OutlierConfig,
    pub detection: DetectionConfig,
    pub descriptor: DescriptorConfig,
    pub oracle: OracleConfig,
    pub network: ChannelConfig,
    pub estimator: EstimatorConfig,
    pub drones: Vec<DroneSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            seed: 0,
            duration: 30.0,
            v_max: 5.0,
            rates: Rates::default(),
            noise: NoiseConfig::default(),
            outliers: OutlierConfig::default(),
            detection: DetectionConfig::default(),
            descriptor: DescriptorConfig::default(),
            oracle: OracleConfig::default(),
            network: ChannelConfig::default(),
            estimator: EstimatorConfig::default(),
            drones: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Scenario, SimError> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.drones.is_empty() {
            return bad("no drones".into());
        }
        if !(self.duration > 0.0) || !(self.v_max > 0.0) {
            return bad("duration and v_max must be positive".into());
        }
        let r = &self.rates;
        if !(r.master_hz > 0.0 && r.uwb_hz > 0.0 && r.detection_hz > 0.0 && r.keyframe_period > 0.0) {
            return bad("rates must be positive".into());
        }
        r.ticks_per(1.0 / r.uwb_hz, "uwb")?;
        r.ticks_per(1.0 / r.detection_hz, "detection")?;
        r.ticks_per(r.keyframe_period, "keyframe")?;
        r.ticks_per(1.0 / self.estimator.frame_hz, "frame")?;
        let mut ids: Vec<DroneId> = self.drones.iter().map(|d| d.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.drones.len() {
            return bad("duplicate drone ids".into());
        }
        for d in &self.drones {
            if d.start < 0.0 || d.stop.is_some_and(|s| s <= d.start) {
                return bad(format!("drone {} has an empty active window", d.id));
            }
            Trajectory::new(d.trajectory.clone())?;
        }
        for p in [self.outliers.uwb_prob, self.outliers.misassoc_rate, self.oracle.gross_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.outliers.uwb_min > self.outliers.uwb_max {
            return bad("uwb outlier range is empty".into());
        }
        self.network
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        Ok(())
    }

    pub fn n_ticks(&self) -> u64 {
        (self.duration * self.rates.master_hz).round() as u64 + 1
    }
}

/// Ground truth of one drone over its active ticks `[start_tick, end_tick)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneTruth {
    pub id: DroneId,
    pub start_tick: u64,
    pub end_tick: u64,
    pub poses6: Vec<Pose6>,
    pub poses4: Vec<Pose4>,
}

impl DroneTruth {
    pub fn active(&self, tick: u64) -> bool {
        tick >= self.start_tick && tick < self.end_tick
    }

    pub fn pose6(&self, tick: u64) -> Option<&Pose6> {
        self.active(tick)
            .then(|| &self.poses6[(tick - self.start_tick) as usize])
    }

    pub fn pose4(&self, tick: u64) -> Option<&Pose4> {
        self.active(tick)
            .then(|| &self.poses4[(tick - self.start_tick) as usize])
    }
}

/// True poses of all drones at master clock ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub master_hz: f64,
    pub n_ticks: u64,
    pub drones: BTreeMap<DroneId, DroneTruth>,
}

impl GroundTruth {
    pub fn tick_of(&self, t: f64) -> u64 {
        (t * self.master_hz).round().max(0.0) as u64
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 / self.master_hz
    }

    pub fn pose6_at(&self, drone: DroneId, t: f64) -> Option<Pose6> {
        self.drones.get(&drone)?.pose6(self.tick_of(t)).copied()
    }

    pub fn pose4_at(&self, drone: DroneId, t: f64) -> Option<Pose4> {
        self.drones.get(&drone)?.pose4(self.tick_of(t)).copied()
    }

    /// Rebuilds ground truth from the `gt` records of a measurement log.
    pub fn from_log(log: &MeasurementLog) -> GroundTruth {
        let hz = log.header.master_hz;
        let mut drones: BTreeMap<DroneId, DroneTruth> = BTreeMap::new();
        for rec in &log.records {
            if let LogRecord::Gt { t, ids, payload } = rec {
                let tick = (t * hz).round() as u64;
                let d = drones.entry(ids[0]).or_insert_with(|| DroneTruth {
                    id: ids[0],
                    start_tick: tick,
                    end_tick: tick,
                    poses6: Vec::new(),
                    poses4: Vec::new(),
                });
                d.poses6.push(*payload);
                d.poses4.push(payload.to_pose4());
                d.end_tick = tick + 1;
            }
        }
        GroundTruth {
            master_hz: hz,
            n_ticks: log.header.n_ticks,
            drones,
        }
    }
}

/// Samples every drone's trajectory on the master clock.
pub fn generate_ground_truth(sc: &Scenario) -> Result<GroundTruth, SimError> {
    sc.validate()?;
    let hz = sc.rates.master_hz;
    let n_ticks = sc.n_ticks();
    let mut drones = BTreeMap::new();
    for spec in &sc.drones {
        let start_tick = (spec.start * hz).round() as u64;
        let end_tick = spec
            .stop
            .map_or(n_ticks, |s| ((s * hz).round() as u64).min(n_ticks));
        let traj = Trajectory::new(spec.trajectory.clone())?;
        let n = end_tick.saturating_sub(start_tick) as usize;
        let poses6 = traj.sample(n, 1.0 / hz, sc.v_max)?;
        let poses4 = poses6.iter().map(Pose6::to_pose4).collect();
        drones.insert(
            spec.id,
            DroneTruth {
                id: spec.id,
                start_tick,
                end_tick,
                poses6,
                poses4,
            },
        );
    }
    Ok(GroundTruth {
        master_hz: hz,
        n_ticks,
        drones,
    })
}

/// Independent random stream for one purpose and one drone.
pub fn stream_rng(seed: u64, tag: &str, drone: DroneId) -> ChaCha8Rng {
    let tag_hash = tag
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    ChaCha8Rng::seed_from_u64(hash_words(&[seed, tag_hash, u64::from(drone)]))
}

/// Generates ground truth and every sensor stream, merged into one
/// time-ordered log.
pub fn simulate(sc: &Scenario) -> Result<MeasurementLog, SimError> {
    let truth = generate_ground_truth(sc)?;
    let hz = sc.rates.master_hz;
    let vio = simulate_vio(&truth, &sc.noise, sc.seed);
    let uwb_every = sc.rates.ticks_per(1.0 / sc.rates.uwb_hz, "uwb")?;
    let det_every = sc.rates.ticks_per(1.0 / sc.rates.detection_hz, "detection")?;
    let kf_every = sc.rates.ticks_per(sc.rates.keyframe_period, "keyframe")?;
    let uwb_ids: Vec<DroneId> = sc.drones.iter().filter(|d| d.uwb).map(|d| d.id).collect();
    let cam_ids: Vec<DroneId> = sc.drones.iter().filter(|d| d.camera).map(|d| d.id).collect();
    let uwb = simulate_uwb(&truth, &uwb_ids, uwb_every, &sc.noise, &sc.outliers, &sc.estimator.sigmas, sc.seed);
    let detections = if sc.detection.enabled {
        simulate_detections(
            &truth,
            &cam_ids,
            det_every,
            &sc.detection,
            &sc.noise,
            sc.outliers.misassoc_rate,
            &sc.estimator.sigmas,
            sc.seed,
        )
    } else {
        Vec::new()
    };
    let field = DescriptorField::new(hash_words(&[sc.seed, 0xDE5C]), sc.descriptor);

    let header = LogHeader {
        name: sc.name.clone(),
        seed: sc.seed,
        duration: sc.duration,
        master_hz: hz,
        n_ticks: truth.n_ticks,
        drones: truth
            .drones
            .values()
            .map(|d| DroneInfo {
                id: d.id,
                start: truth.time_of(d.start_tick),
                stop: truth.time_of(d.end_tick),
            })
            .collect(),
    };

    let mut uwb_by_tick: BTreeMap<u64, Vec<&UwbSample>> = BTreeMap::new();
    for s in &uwb {
        uwb_by_tick.entry(s.tick).or_default().push(s);
    }
    let mut det_by_tick: BTreeMap<u64, Vec<&DetectionSample>> = BTreeMap::new();
    for s in &detections {
        det_by_tick.entry(s.tick).or_default().push(s);
    }

    let mut records = Vec::new();
    let mut desc_rngs: BTreeMap<DroneId, ChaCha8Rng> = truth
        .drones
        .keys()
        .map(|&id| (id, stream_rng(sc.seed, "descriptor", id)))
        .collect();
    for tick in 0..truth.n_ticks {
        let t = truth.time_of(tick);
        for (id, d) in &truth.drones {
            if let Some(p) = d.pose6(tick) {
                records.push(LogRecord::Gt {
                    t,
                    ids: [*id],
                    payload: *p,
                });
            }
        }
        for (id, stream) in &vio {
            if let Some(s) = stream.get(&tick) {
                records.push(LogRecord::Vio {
                    t,
                    ids: [*id],
                    payload: VioPayload {
                        pose4: s.pose4,
                        pose6: s.pose6,
                    },
                });
            }
        }
        for s in uwb_by_tick.get(&tick).into_iter().flatten() {
            records.push(LogRecord::Uwb {
                t,
                ids: [s.edge.i, s.edge.j],
                payload: UwbPayload {
                    d: s.edge.d,
                    sigma: s.edge.sigma,
                    outlier: s.outlier,
                },
            });
        }
        for s in det_by_tick.get(&tick).into_iter().flatten() {
            records.push(LogRecord::Detection {
                t,
                ids: [s.obs.observer, s.true_target],
                payload: DetectionPayload::from_observation(&s.obs),
            });
        }
        if tick % kf_every == 0 {
            for (id, d) in &truth.drones {
                let (Some(gt), Some(v)) = (d.pose6(tick), vio.get(id).and_then(|s| s.get(&tick))) else {
                    continue;
                };
                let rng = desc_rngs.get_mut(id).expect("rng per drone");
                let kf = make_keyframe(*id, t, &v.pose4, &v.pose6, gt, &field, rng);
                records.push(LogRecord::Keyframe {
                    t,
                    ids: [*id],
                    payload: KeyframePayload {
                        vio4: kf.vio4,
                        vio6: kf.vio6,
                        descriptors: kf.descriptors,
                    },
                });
            }
        }
    }
    Ok(MeasurementLog { header, records })
}
