use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::descriptor::hash_words;
use super::GroundTruth;
use crate::geometry::{relative4, rotz, Pose4, Pose6};
use crate::maploc::{Keyframe, PoseExtraction, PoseExtractor};
use crate::time_key;

/// Noise and inlier model of the relative pose oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub max_inliers: u32,
    /// Inliers fall off as a Gaussian of the true keyframe distance with this
    /// scale, meters.
    pub r_loop: f64,
    pub sigma_pos: f64,
    pub sigma_yaw: f64,
    /// Probability that a call returns a gross error with many inliers.
    pub gross_prob: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_inliers: 100,
            r_loop: 2.0,
            sigma_pos: 0.05,
            sigma_yaw: 0.02,
            gross_prob: 0.0,
        }
    }
}

/// One oracle draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSample {
    pub inliers: u32,
    /// Pose of keyframe `a` in the VIO frame of keyframe `b`'s drone.
    pub pose: Pose6,
    /// 4-DoF relative pose from `a` to `b` implied by `pose`.
    pub rel: Pose4,
    pub gross: bool,
}

/// Noisy stand-in for feature matching plus PnP between keyframes `a`
/// (database candidate) and `b` (query), given their true poses.
pub fn extract_relative_pose_oracle(
    _a: &Keyframe,
    gt_a: &Pose6,
    b: &Keyframe,
    gt_b: &Pose6,
    cfg: &OracleConfig,
    rng: &mut impl Rng,
) -> OracleSample {
    let gross = rng.random::<f64>() < cfg.gross_prob;
    let range = (gt_a.translation - gt_b.translation).norm();
    let nominal = f64::from(cfg.max_inliers) * (-range * range / (2.0 * cfg.r_loop * cfg.r_loop)).exp();
    let mut pose = b.vio6.compose(&gt_b.inverse()).compose(gt_a);
    let n = |rng: &mut dyn rand::RngCore| -> f64 { rng.sample(StandardNormal) };
    let noise_t = Vector3::new(n(rng), n(rng), n(rng)) * cfg.sigma_pos;
    let noise_yaw = n(rng) * cfg.sigma_yaw;
    let mut inliers = nominal.round() as u32;
    if gross {
        let dir = Vector3::new(n(rng), n(rng), n(rng)).normalize();
        let dist = rng.random_range(1.0..4.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let dyaw = sign * rng.random_range(0.3..1.5);
        pose.translation += dir * dist;
        pose.rotation = rotz(dyaw).mul(&pose.rotation);
        let hi = f64::from(cfg.max_inliers);
        inliers = rng.random_range(0.5 * hi..=hi).round() as u32;
    }
    pose.translation += noise_t;
    pose.rotation = rotz(noise_yaw).mul(&pose.rotation);
    OracleSample {
        inliers,
        pose,
        rel: relative4(&pose.to_pose4(), &b.vio4),
        gross,
    }
}

/// [`PoseExtractor`] backed by simulator ground truth. Each (candidate,
/// query) pair gets its own deterministic random stream, so every drone that
/// evaluates the same pair sees the same result.
#[derive(Debug, Clone)]
pub struct OracleExtractor {
    truth: Arc<GroundTruth>,
    cfg: OracleConfig,
    seed: u64,
}

impl OracleExtractor {
    pub fn new(truth: Arc<GroundTruth>, cfg: OracleConfig, seed: u64) -> Self {
        OracleExtractor { truth, cfg, seed }
    }

    fn pair_rng(&self, a: &Keyframe, b: &Keyframe) -> ChaCha8Rng {
        let h = hash_words(&[
            self.seed,
            0x0AC1E,
            u64::from(a.drone),
            time_key(a.t) as u64,
            u64::from(b.drone),
            time_key(b.t) as u64,
        ]);
        ChaCha8Rng::seed_from_u64(h)
    }

    pub fn sample(&self, candidate: &Keyframe, query: &Keyframe) -> Option<OracleSample> {
        let gt_a = self.truth.pose6_at(candidate.drone, candidate.t)?;
        let gt_b = self.truth.pose6_at(query.drone, query.t)?;
        let mut rng = self.pair_rng(candidate, query);
        Some(extract_relative_pose_oracle(
            candidate, &gt_a, query, &gt_b, &self.cfg, &mut rng,
        ))
    }

    /// Whether the pair was (or would be) answered with a gross error.
    pub fn is_gross(&self, candidate: &Keyframe, query: &Keyframe) -> bool {
        self.pair_rng(candidate, query).random::<f64>() < self.cfg.gross_prob
    }

    /// Same as [`OracleExtractor::is_gross`] keyed by endpoint identities.
    pub fn is_gross_pair(&self, from: (crate::DroneId, f64), to: (crate::DroneId, f64)) -> bool {
        let stub = |(drone, t): (crate::DroneId, f64)| Keyframe {
            drone,
            t,
            vio4: Pose4::identity(),
            vio6: Pose6::identity(),
            descriptors: Vec::new(),
            origin: Default::default(),
        };
        self.is_gross(&stub(from), &stub(to))
    }
}

impl PoseExtractor for OracleExtractor {
    fn extract(&self, candidate: &Keyframe, query: &Keyframe) -> Option<PoseExtraction> {
        self.sample(candidate, query).map(|s| PoseExtraction {
            inliers: s.inliers,
            pose: s.pose,
        })
    }
}
