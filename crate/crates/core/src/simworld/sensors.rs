use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::descriptor::{hash_words, normalize};
use super::{stream_rng, DescriptorField, DetectionConfig, GroundTruth, NoiseConfig, OutlierConfig};
use crate::geometry::{compose4, relative4, rotate_z_inv, rotz, Pose4, Pose6, Rot3};
use crate::maploc::{Keyframe, Origin};
use crate::measurements::{
    detection_forward_model, tangent_basis, DefaultSigmas, DetectionObservation, DistanceEdge,
};
use crate::DroneId;

fn gauss(rng: &mut dyn RngCore) -> f64 {
    rng.sample(StandardNormal)
}

/// One VIO output on the master clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VioSample {
    pub tick: u64,
    pub pose4: Pose4,
    pub pose6: Pose6,
}

/// Drifting odometry per drone, starting at identity when the drone powers
/// on. Each step perturbs the true 4-DoF increment; a per-drone scale and
/// yaw-rate bias make the drift grow with distance travelled.
pub fn simulate_vio(
    truth: &GroundTruth,
    noise: &NoiseConfig,
    seed: u64,
) -> BTreeMap<DroneId, BTreeMap<u64, VioSample>> {
    let mut out = BTreeMap::new();
    for (id, d) in &truth.drones {
        let mut rng = stream_rng(seed, "vio", *id);
        let scale = 1.0 + noise.vio_scale_bias * gauss(&mut rng);
        let yaw_bias = noise.vio_yaw_bias * gauss(&mut rng);
        let mut stream = BTreeMap::new();
        let mut vio = Pose4::identity();
        for (k, gt4) in d.poses4.iter().enumerate() {
            let tick = d.start_tick + k as u64;
            if k > 0 {
                let delta = relative4(&d.poses4[k - 1], gt4);
                let len = delta.translation().norm();
                let s_pos = noise.vio_pos_frac * len + noise.vio_pos_density * len.sqrt();
                let s_yaw = noise.vio_yaw_frac * len + noise.vio_yaw_density * len.sqrt();
                let mut step = delta.translation() * scale;
                for c in 0..3 {
                    step[c] += s_pos * gauss(&mut rng);
                }
                let dyaw = delta.yaw + yaw_bias * len + s_yaw * gauss(&mut rng);
                vio = compose4(&vio, &Pose4::from_translation(step, dyaw));
            }
            let gt6 = &d.poses6[k];
            let pose6 = Pose6::new(rotz(vio.yaw - gt4.yaw).mul(&gt6.rotation), vio.translation());
            stream.insert(
                tick,
                VioSample {
                    tick,
                    pose4: vio,
                    pose6,
                },
            );
        }
        out.insert(*id, stream);
    }
    out
}

/// A simulated range with its injection label.
#[derive(Debug, Clone, PartialEq)]
pub struct UwbSample {
    pub tick: u64,
    pub edge: DistanceEdge,
    pub outlier: bool,
}

/// Ranges between every ordered pair of active UWB-equipped drones every
/// `every` ticks. `sigmas.distance` is the std-dev the edge advertises.
pub fn simulate_uwb(
    truth: &GroundTruth,
    ids: &[DroneId],
    every: u64,
    noise: &NoiseConfig,
    outliers: &OutlierConfig,
    sigmas: &DefaultSigmas,
    seed: u64,
) -> Vec<UwbSample> {
    let mut rngs: BTreeMap<DroneId, _> = ids.iter().map(|&i| (i, stream_rng(seed, "uwb", i))).collect();
    let mut out = Vec::new();
    for tick in (0..truth.n_ticks).step_by(every as usize) {
        for &i in ids {
            for &j in ids {
                if i == j {
                    continue;
                }
                let (Some(pi), Some(pj)) = (
                    truth.drones.get(&i).and_then(|d| d.pose4(tick)),
                    truth.drones.get(&j).and_then(|d| d.pose4(tick)),
                ) else {
                    continue;
                };
                let rng = rngs.get_mut(&i).expect("rng per drone");
                let true_d = (pi.translation() - pj.translation()).norm();
                let mut d = true_d + noise.uwb_sigma * gauss(rng);
                let outlier = rng.random::<f64>() < outliers.uwb_prob;
                let bias = rng.random_range(outliers.uwb_min..=outliers.uwb_max);
                if outlier {
                    d += bias;
                }
                out.push(UwbSample {
                    tick,
                    edge: DistanceEdge {
                        i,
                        j,
                        t: truth.time_of(tick),
                        d: d.max(0.0),
                        sigma: sigmas.distance,
                    },
                    outlier,
                });
            }
        }
    }
    out
}

/// True if `v` (camera to target, body frame) lies inside the blind cone
/// around -z.
pub fn in_dead_zone(v: &Vector3<f64>, half_angle: f64) -> bool {
    let n = v.norm();
    n > 0.0 && -v.z / n > half_angle.cos()
}

/// A simulated detection with its injection labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub tick: u64,
    pub obs: DetectionObservation,
    pub true_target: DroneId,
    pub mislabeled: bool,
}

/// Bearing and inverse-depth detections for every ordered pair of active
/// drones outside the dead zone and within range, every `every` ticks.
#[allow(clippy::too_many_arguments)]
pub fn simulate_detections(
    truth: &GroundTruth,
    observers: &[DroneId],
    every: u64,
    cfg: &DetectionConfig,
    noise: &NoiseConfig,
    misassoc_rate: f64,
    sigmas: &DefaultSigmas,
    seed: u64,
) -> Vec<DetectionSample> {
    let cam_pos = Vector3::from(cfg.cam_pos);
    let cam_rot = Rot3::identity();
    let all: Vec<DroneId> = truth.drones.keys().copied().collect();
    let mut out = Vec::new();
    let mut rngs: BTreeMap<DroneId, _> = observers
        .iter()
        .map(|&k| (k, stream_rng(seed, "detection", k)))
        .collect();
    for tick in (0..truth.n_ticks).step_by(every as usize) {
        for &k in observers {
            let Some(pk) = truth.drones.get(&k).and_then(|d| d.pose4(tick)) else {
                continue;
            };
            for &i in &all {
                if i == k {
                    continue;
                }
                let Some(pi) = truth.drones[&i].pose4(tick) else {
                    continue;
                };
                let rel = rotate_z_inv(pk.yaw, &(pi.translation() - pk.translation()));
                let v = rel - cam_pos;
                if in_dead_zone(&v, cfg.dead_zone_half_angle) || v.norm() > cfg.max_range {
                    continue;
                }
                let Ok((dir, inv_depth)) = detection_forward_model(&rel, &cam_rot, &cam_pos) else {
                    continue;
                };
                let rng = rngs.get_mut(&k).expect("rng per observer");
                let (b1, b2) = tangent_basis(&dir);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let axis = b1 * phi.cos() + b2 * phi.sin();
                let angle = noise.det_sigma_dir * gauss(rng);
                let dir = Rot3::from_axis_angle(&axis, angle).apply(&dir).normalize();
                let inv_depth = (inv_depth * (1.0 + noise.det_inv_depth_frac * gauss(rng))).max(1e-6);
                let mislabeled = rng.random::<f64>() < misassoc_rate;
                let pick = rng.random::<u64>();
                let label = if mislabeled {
                    let others: Vec<DroneId> = all.iter().copied().filter(|&d| d != i && d != k).collect();
                    (!others.is_empty()).then(|| others[(pick % others.len() as u64) as usize])
                } else {
                    Some(i)
                };
                out.push(DetectionSample {
                    tick,
                    obs: DetectionObservation {
                        observer: k,
                        t: truth.time_of(tick),
                        label,
                        dir,
                        inv_depth,
                        cam_rot,
                        cam_pos,
                        sigma_dir: sigmas.detection_dir,
                        sigma_inv_depth: sigmas.detection_inv_depth_frac * inv_depth,
                    },
                    true_target: i,
                    mislabeled,
                });
            }
        }
    }
    out
}

/// Keyframe with descriptors embedded from the true position.
pub fn make_keyframe(
    drone: DroneId,
    t: f64,
    vio4: &Pose4,
    vio6: &Pose6,
    gt: &Pose6,
    field: &DescriptorField,
    rng: &mut dyn RngCore,
) -> Keyframe {
    let descriptors = (0..field.cfg.cameras.max(1))
        .map(|cam| {
            let f = if cam == 0 {
                *field
            } else {
                DescriptorField::new(hash_words(&[field.seed, cam as u64]), field.cfg)
            };
            let mut d = f.eval(&gt.translation);
            for x in d.iter_mut() {
                *x += field.cfg.noise * gauss(rng);
            }
            normalize(d)
        })
        .collect();
    Keyframe {
        drone,
        t,
        vio4: *vio4,
        vio6: *vio6,
        descriptors,
        origin: Origin::Local,
    }
}
