//! Map-based localization between drones: keyframe databases, descriptor
//! retrieval, gravity consistency check and map-edge production.
//!
//! Every drone keeps a local database of its own keyframes and a remote one
//! for keyframes heard over the network. A remote keyframe is only matched
//! against the local database, so a map edge always has a local endpoint.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative4, rotz, yaw_of, Pose4, Pose6, Rot3};
use crate::measurements::MapEdge;
use crate::{time_key, DroneId};

#[derive(Debug, Error)]
pub enum MapLocError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad keyframe record on line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Local,
    Remote,
}

/// Snapshot of one drone at one instant as seen by place recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub drone: DroneId,
    pub t: f64,
    pub vio4: Pose4,
    pub vio6: Pose6,
    /// One unit vector per virtual camera.
    pub descriptors: Vec<Vec<f64>>,
    #[serde(default)]
    pub origin: Origin,
}

impl Keyframe {
    pub fn key(&self) -> (DroneId, i64) {
        (self.drone, time_key(self.t))
    }
}

pub fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Keyframes indexed by their global descriptors. Retrieval is an exact
/// linear scan.
#[derive(Debug, Clone, Default)]
pub struct KeyframeDatabase {
    keyframes: Vec<Arc<Keyframe>>,
    keys: BTreeSet<(DroneId, i64)>,
}

impl KeyframeDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn contains(&self, key: (DroneId, i64)) -> bool {
        self.keys.contains(&key)
    }

    /// Returns false and leaves the database unchanged on a duplicate key.
    pub fn insert(&mut self, kf: Arc<Keyframe>) -> bool {
        if !self.keys.insert(kf.key()) {
            return false;
        }
        self.keyframes.push(kf);
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Keyframe>> {
        self.keyframes.iter()
    }

    /// The `k` stored keyframes nearest to `descriptor`, nearest first. A
    /// keyframe's distance is the minimum over its descriptors. Ties keep
    /// insertion order.
    pub fn knn(&self, descriptor: &[f64], k: usize) -> Vec<(f64, Arc<Keyframe>)> {
        let mut scored: Vec<(f64, usize)> = self
            .keyframes
            .iter()
            .enumerate()
            .map(|(idx, kf)| {
                let d = kf
                    .descriptors
                    .iter()
                    .map(|c| descriptor_distance(c, descriptor))
                    .fold(f64::INFINITY, f64::min);
                (d, idx)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored
            .into_iter()
            .take(k)
            .map(|(d, idx)| (d, Arc::clone(&self.keyframes[idx])))
            .collect()
    }
}

/// Acceptance thresholds of the loop detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopThresholds {
    /// Maximum descriptor distance.
    pub feature_dist: f64,
    pub min_inliers: u32,
    /// Maximum gravity deviation, radians.
    pub max_rot_dev: f64,
    /// Maximum edge translation, meters.
    pub max_edge_len: f64,
    /// Same-drone candidates closer than this in time are ignored, seconds.
    pub t_guard: f64,
    /// Neighbours retrieved per descriptor.
    pub knn: usize,
}

impl Default for LoopThresholds {
    fn default() -> Self {
        LoopThresholds {
            feature_dist: 0.5,
            min_inliers: 20,
            max_rot_dev: 5f64.to_radians(),
            max_edge_len: 10.0,
            t_guard: 5.0,
            knn: 5,
        }
    }
}

/// Output of a relative pose extractor for a (candidate, query) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseExtraction {
    pub inliers: u32,
    /// Pose of the candidate keyframe expressed in the query drone's VIO frame.
    pub pose: Pose6,
}

/// Recovers the relative pose between two keyframes (PnP in a real system).
pub trait PoseExtractor: Send + Sync {
    fn extract(&self, candidate: &Keyframe, query: &Keyframe) -> Option<PoseExtraction>;
}

/// Best database match for `f`: the local database is always searched, the
/// remote one only for the drone's own keyframes.
pub fn kf_query(
    f: &Keyframe,
    local_db: &KeyframeDatabase,
    remote_db: &KeyframeDatabase,
    self_id: DroneId,
    thresholds: &LoopThresholds,
) -> Option<(Arc<Keyframe>, f64)> {
    let mut candidates: Vec<(f64, Arc<Keyframe>)> = Vec::new();
    for desc in &f.descriptors {
        if f.drone == self_id {
            candidates.extend(remote_db.knn(desc, thresholds.knn));
        }
        candidates.extend(local_db.knn(desc, thresholds.knn));
    }
    let mut best: Option<(Arc<Keyframe>, f64)> = None;
    let mut l_min = f64::INFINITY;
    for (dist, kf) in candidates {
        if kf.key() == f.key() {
            continue;
        }
        if kf.drone == f.drone && (kf.t - f.t).abs() < thresholds.t_guard {
            continue;
        }
        if dist < thresholds.feature_dist.min(l_min) {
            l_min = dist;
            best = Some((kf, dist));
        }
    }
    best
}

/// Result of the gravity consistency check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityCheck {
    pub passed: bool,
    /// Rotation angle left after removing the best yaw, radians.
    pub deviation: f64,
}

/// Gravity consistency of an extracted attitude.
///
/// `r_i_in_vj` is the candidate's attitude as recovered in the query drone's
/// VIO frame, `r_i` and `r_j` are the two VIO attitudes. VIO frames are
/// gravity aligned, so a consistent extraction differs from them only by a
/// yaw. Passes iff the remaining rotation is within `tau_rot`.
pub fn g_check(r_i_in_vj: &Rot3, r_i: &Rot3, r_j: &Rot3, tau_rot: f64) -> GravityCheck {
    let delta = r_i_in_vj.transpose().mul(r_j);
    let r_j_in_vi = r_i.mul(&delta);
    let dpsi = yaw_of(r_j) - yaw_of(&r_j_in_vi);
    let residual = rotz(dpsi).mul(&r_j_in_vi).transpose().mul(r_j);
    let deviation = residual.angle();
    GravityCheck {
        passed: deviation <= tau_rot,
        deviation,
    }
}

/// Map edge from candidate `i@t0` to query `j@t1` given the candidate's pose
/// in the query drone's VIO frame. The relative pose is taken in the yaw-only
/// frame of the candidate, which is what the estimator's residual compares.
pub fn map_edge_from_extraction(
    candidate: &Keyframe,
    query: &Keyframe,
    extraction: &PoseExtraction,
    sigma: [f64; 4],
) -> MapEdge {
    MapEdge {
        from: (candidate.drone, candidate.t),
        to: (query.drone, query.t),
        rel: relative4(&extraction.pose.to_pose4(), &query.vio4),
        sigma,
        inliers: extraction.inliers,
    }
}

/// Why a keyframe did not produce an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOutcome {
    Accepted,
    NoMatch,
    ExtractionFailed,
    TooFewInliers,
    GravityCheckFailed,
    TooLong,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopStats {
    pub queries: u64,
    pub accepted: u64,
    pub no_match: u64,
    pub extraction_failed: u64,
    pub too_few_inliers: u64,
    pub gravity_rejected: u64,
    pub too_long: u64,
    pub duplicates: u64,
}

/// Per-drone place recognition state.
#[derive(Debug, Clone)]
pub struct MapLocalizer {
    pub self_id: DroneId,
    pub local_db: KeyframeDatabase,
    pub remote_db: KeyframeDatabase,
    pub thresholds: LoopThresholds,
    pub edge_sigma: [f64; 4],
    pub stats: LoopStats,
}

impl MapLocalizer {
    pub fn new(self_id: DroneId, thresholds: LoopThresholds, edge_sigma: [f64; 4]) -> Self {
        MapLocalizer {
            self_id,
            local_db: KeyframeDatabase::new(),
            remote_db: KeyframeDatabase::new(),
            thresholds,
            edge_sigma,
            stats: LoopStats::default(),
        }
    }

    /// Stores `f` in the local or remote database. Duplicates are ignored and
    /// counted.
    pub fn add_keyframe(&mut self, f: &Keyframe) -> bool {
        let mut kf = f.clone();
        let db = if f.drone == self.self_id {
            kf.origin = Origin::Local;
            &mut self.local_db
        } else {
            kf.origin = Origin::Remote;
            &mut self.remote_db
        };
        let inserted = db.insert(Arc::new(kf));
        if !inserted {
            self.stats.duplicates += 1;
        }
        inserted
    }

    /// Runs query, extraction and the three gates on `f`, then stores `f`.
    pub fn loop_detection(
        &mut self,
        f: &Keyframe,
        extractor: &dyn PoseExtractor,
    ) -> (Option<MapEdge>, LoopOutcome) {
        self.stats.queries += 1;
        let known = self.local_db.contains(f.key()) || self.remote_db.contains(f.key());
        let result = if known {
            (None, LoopOutcome::NoMatch)
        } else {
            self.detect(f, extractor)
        };
        match result.1 {
            LoopOutcome::Accepted => self.stats.accepted += 1,
            LoopOutcome::NoMatch => self.stats.no_match += 1,
            LoopOutcome::ExtractionFailed => self.stats.extraction_failed += 1,
            LoopOutcome::TooFewInliers => self.stats.too_few_inliers += 1,
            LoopOutcome::GravityCheckFailed => self.stats.gravity_rejected += 1,
            LoopOutcome::TooLong => self.stats.too_long += 1,
        }
        self.add_keyframe(f);
        result
    }

    fn detect(&self, f: &Keyframe, extractor: &dyn PoseExtractor) -> (Option<MapEdge>, LoopOutcome) {
        let Some((candidate, _)) =
            kf_query(f, &self.local_db, &self.remote_db, self.self_id, &self.thresholds)
        else {
            return (None, LoopOutcome::NoMatch);
        };
        let Some(extraction) = extractor.extract(&candidate, f) else {
            return (None, LoopOutcome::ExtractionFailed);
        };
        if extraction.inliers < self.thresholds.min_inliers {
            return (None, LoopOutcome::TooFewInliers);
        }
        let check = g_check(
            &extraction.pose.rotation,
            &candidate.vio6.rotation,
            &f.vio6.rotation,
            self.thresholds.max_rot_dev,
        );
        if !check.passed {
            return (None, LoopOutcome::GravityCheckFailed);
        }
        let edge = map_edge_from_extraction(&candidate, f, &extraction, self.edge_sigma);
        if edge.rel.translation().norm() > self.thresholds.max_edge_len {
            return (None, LoopOutcome::TooLong);
        }
        (Some(edge), LoopOutcome::Accepted)
    }

    /// Writes both databases as JSON lines, local first.
    pub fn dump(&self, mut w: impl Write) -> Result<(), MapLocError> {
        for kf in self.local_db.iter().chain(self.remote_db.iter()) {
            serde_json::to_writer(&mut w, kf.as_ref()).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Re-inserts keyframes from [`MapLocalizer::dump`] output.
    pub fn load(&mut self, r: impl BufRead) -> Result<usize, MapLocError> {
        let mut n = 0;
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let kf: Keyframe = serde_json::from_str(&line).map_err(|source| MapLocError::Parse {
                line: idx + 1,
                source,
            })?;
            if self.add_keyframe(&kf) {
                n += 1;
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compose4;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn kf(drone: DroneId, t: f64, desc: Vec<f64>) -> Keyframe {
        Keyframe {
            drone,
            t,
            vio4: Pose4::identity(),
            vio6: Pose6::identity(),
            descriptors: vec![desc],
            origin: Origin::Local,
        }
    }

    /// Unit vector at distance `d` from e0 in the e0/e1 plane.
    fn at_distance(d: f64) -> Vec<f64> {
        let c = 1.0 - d * d / 2.0;
        vec![c, (1.0 - c * c).sqrt(), 0.0]
    }

    #[test]
    fn empty_databases_give_nothing() {
        let f = kf(0, 10.0, unit(&[1.0, 0.0, 0.0]));
        let db = KeyframeDatabase::new();
        assert!(kf_query(&f, &db, &db, 0, &LoopThresholds::default()).is_none());
    }

    #[test]
    fn single_close_keyframe_is_returned() {
        let mut remote = KeyframeDatabase::new();
        remote.insert(Arc::new(kf(1, 3.0, at_distance(0.1))));
        let f = kf(0, 10.0, unit(&[1.0, 0.0, 0.0]));
        let (m, d) = kf_query(&f, &KeyframeDatabase::new(), &remote, 0, &LoopThresholds::default()).unwrap();
        assert_eq!(m.drone, 1);
        assert!((d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn argmin_candidate_wins_and_matches_brute_force() {
        let mut remote = KeyframeDatabase::new();
        remote.insert(Arc::new(kf(1, 3.0, at_distance(0.3))));
        remote.insert(Arc::new(kf(2, 4.0, at_distance(0.14))));
        let f = kf(0, 10.0, unit(&[1.0, 0.0, 0.0]));
        let th = LoopThresholds::default();
        let (m, _) = kf_query(&f, &KeyframeDatabase::new(), &remote, 0, &th).unwrap();
        assert_eq!(m.drone, 2);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut local = KeyframeDatabase::new();
            let mut remote = KeyframeDatabase::new();
            for n in 0..20 {
                let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let k = kf(n % 3, n as f64 * 10.0, unit(&v));
                if n % 3 == 0 {
                    local.insert(Arc::new(k));
                } else {
                    remote.insert(Arc::new(k));
                }
            }
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = kf(0, 1000.0, unit(&q));
            let th = LoopThresholds {
                feature_dist: 1.0,
                knn: 100,
                ..Default::default()
            };
            let brute = local
                .iter()
                .chain(remote.iter())
                .map(|k| (descriptor_distance(&k.descriptors[0], &f.descriptors[0]), k.key()))
                .filter(|(d, _)| *d < th.feature_dist)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let got = kf_query(&f, &local, &remote, 0, &th).map(|(k, d)| (d, k.key()));
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn remote_keyframes_only_search_the_local_database() {
        let mut remote = KeyframeDatabase::new();
        remote.insert(Arc::new(kf(2, 3.0, at_distance(0.01))));
        let f = kf(1, 10.0, unit(&[1.0, 0.0, 0.0]));
        assert!(kf_query(&f, &KeyframeDatabase::new(), &remote, 0, &LoopThresholds::default()).is_none());
    }

    #[test]
    fn temporally_adjacent_self_matches_are_excluded() {
        let mut local = KeyframeDatabase::new();
        local.insert(Arc::new(kf(0, 8.0, at_distance(0.01))));
        let f = kf(0, 10.0, unit(&[1.0, 0.0, 0.0]));
        let th = LoopThresholds::default();
        assert!(kf_query(&f, &local, &KeyframeDatabase::new(), 0, &th).is_none());
        local.insert(Arc::new(kf(0, 2.0, at_distance(0.02))));
        assert_eq!(kf_query(&f, &local, &KeyframeDatabase::new(), 0, &th).unwrap().0.t, 2.0);
    }

    #[test]
    fn exact_descriptor_retrieves_every_keyframe() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut db = KeyframeDatabase::new();
        for n in 0..30 {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            db.insert(Arc::new(kf(1, n as f64, unit(&v))));
        }
        for k in db.iter() {
            let (d, hit) = &db.knn(&k.descriptors[0], 1)[0];
            assert_eq!(*d, 0.0);
            assert_eq!(hit.key(), k.key());
        }
    }

    #[test]
    fn g_check_identity_passes() {
        let i = Rot3::identity();
        let c = g_check(&i, &i, &i, 5f64.to_radians());
        assert!(c.passed);
        assert!(c.deviation < 1e-12);
    }

    #[test]
    fn g_check_ignores_yaw_offsets_of_consistent_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut r = || rng.random_range(-0.3..0.3);
            let r_i = Rot3::from_euler(r(), r(), 3.0 * r());
            let r_j = Rot3::from_euler(r(), r(), 3.0 * r());
            // Candidate attitude in the query frame differs from its VIO
            // attitude by a pure yaw.
            let offset = 10.0 * r();
            let r_hat = rotz(offset).mul(&r_i);
            let c = g_check(&r_hat, &r_i, &r_j, 5f64.to_radians());
            assert!(c.passed && c.deviation < 1e-7, "{}", c.deviation);
        }
    }

    #[test]
    fn g_check_rejects_roll_corruption() {
        let r_i = Rot3::from_euler(0.05, -0.02, 0.4);
        let r_j = Rot3::from_euler(-0.03, 0.01, -1.1);
        let r_hat = rotz(0.7).mul(&r_i).mul(&Rot3::from_euler(20f64.to_radians(), 0.0, 0.0));
        let c = g_check(&r_hat, &r_i, &r_j, 5f64.to_radians());
        assert!(!c.passed);
        assert!(c.deviation > 15f64.to_radians(), "{}", c.deviation);
    }

    #[test]
    fn g_check_is_invariant_to_common_yaw_on_query() {
        let r_i = Rot3::from_euler(0.1, 0.05, 0.3);
        let r_j = Rot3::from_euler(-0.1, 0.02, 1.0);
        let r_hat = Rot3::from_euler(0.15, 0.0, -0.2);
        let base = g_check(&r_hat, &r_i, &r_j, 1.0).deviation;
        for a in [-2.0, -0.5, 0.9, 3.0] {
            // A yaw applied to the query drone's frame rotates both R_j and the
            // candidate's attitude expressed in that frame.
            let d = g_check(&rotz(a).mul(&r_hat), &r_i, &rotz(a).mul(&r_j), 1.0).deviation;
            assert!((d - base).abs() < 1e-9);
        }
    }

    struct Fixed(PoseExtraction);

    impl PoseExtractor for Fixed {
        fn extract(&self, _: &Keyframe, _: &Keyframe) -> Option<PoseExtraction> {
            Some(self.0)
        }
    }

    fn pose6(p: Pose4, roll: f64, pitch: f64) -> Pose6 {
        Pose6::new(Rot3::from_euler(roll, pitch, p.yaw), p.translation())
    }

    #[test]
    fn no_match_stores_the_keyframe() {
        let mut loc = MapLocalizer::new(0, LoopThresholds::default(), [0.05, 0.05, 0.05, 0.02]);
        let f = kf(0, 1.0, unit(&[1.0, 0.0]));
        let extractor = Fixed(PoseExtraction {
            inliers: 100,
            pose: Pose6::identity(),
        });
        let (edge, outcome) = loc.loop_detection(&f, &extractor);
        assert!(edge.is_none());
        assert_eq!(outcome, LoopOutcome::NoMatch);
        assert_eq!(loc.local_db.len(), 1);
        let g = kf(3, 1.0, unit(&[0.0, 1.0]));
        loc.loop_detection(&g, &extractor);
        assert_eq!(loc.remote_db.len(), 1);
    }

    #[test]
    fn add_keyframe_routes_and_deduplicates() {
        let mut loc = MapLocalizer::new(0, LoopThresholds::default(), [0.05; 4]);
        assert!(loc.add_keyframe(&kf(0, 1.0, unit(&[1.0]))));
        assert_eq!((loc.local_db.len(), loc.remote_db.len()), (1, 0));
        assert!(loc.add_keyframe(&kf(1, 1.0, unit(&[1.0]))));
        assert_eq!((loc.local_db.len(), loc.remote_db.len()), (1, 1));
        assert!(!loc.add_keyframe(&kf(1, 1.0, unit(&[1.0]))));
        assert_eq!((loc.local_db.len(), loc.remote_db.len()), (1, 1));
        assert_eq!(loc.stats.duplicates, 1);
    }

    /// Two drones at nearby true poses with different VIO frames; the
    /// extractor returns the exact candidate pose in the query VIO frame.
    fn colocated_pair(rng: &mut impl Rng) -> (Keyframe, Keyframe, Pose4, Pose4, PoseExtraction) {
        let mut r = |s: f64| rng.random_range(-s..s);
        let gt_i = Pose4::new(r(5.0), r(5.0), 1.0 + r(0.5), r(3.0));
        let gt_j = compose4(&gt_i, &Pose4::new(r(0.5), r(0.5), r(0.2), r(1.0)));
        let (roll_i, pitch_i, roll_j, pitch_j) = (r(0.2), r(0.2), r(0.2), r(0.2));
        let gt6_i = pose6(gt_i, roll_i, pitch_i);
        let gt6_j = pose6(gt_j, roll_j, pitch_j);
        // VIO frame of each drone: an arbitrary gravity-aligned transform.
        let frame_i = Pose4::new(r(10.0), r(10.0), r(1.0), r(3.0));
        let frame_j = Pose4::new(r(10.0), r(10.0), r(1.0), r(3.0));
        let to6 = |f: &Pose4| Pose6::new(rotz(f.yaw), f.translation());
        let vio6_i = to6(&frame_i).compose(&gt6_i);
        let vio6_j = to6(&frame_j).compose(&gt6_j);
        let cand = Keyframe {
            drone: 1,
            t: 3.0,
            vio4: vio6_i.to_pose4(),
            vio6: vio6_i,
            descriptors: vec![unit(&[1.0, 0.0])],
            origin: Origin::Remote,
        };
        let query = Keyframe {
            drone: 0,
            t: 30.0,
            vio4: vio6_j.to_pose4(),
            vio6: vio6_j,
            descriptors: vec![unit(&[1.0, 0.01])],
            origin: Origin::Local,
        };
        let pose = vio6_j.compose(&gt6_j.inverse()).compose(&gt6_i);
        (cand, query, gt_i, gt_j, PoseExtraction { inliers: 80, pose })
    }

    #[test]
    fn noiseless_colocated_keyframes_yield_the_true_relative_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (cand, query, gt_i, gt_j, ex) = colocated_pair(&mut rng);
            let mut loc = MapLocalizer::new(0, LoopThresholds::default(), [0.05, 0.05, 0.05, 0.02]);
            loc.add_keyframe(&cand);
            let (edge, outcome) = loc.loop_detection(&query, &Fixed(ex));
            assert_eq!(outcome, LoopOutcome::Accepted);
            let edge = edge.unwrap();
            assert_eq!(edge.from, (1, 3.0));
            assert_eq!(edge.to, (0, 30.0));
            let truth = relative4(&gt_i, &gt_j);
            assert!(edge.rel.max_diff(&truth) < 1e-9);
            assert!(compose4(&gt_i, &edge.rel).max_diff(&gt_j) < 1e-9);
            assert_eq!(loc.local_db.len() + loc.remote_db.len(), 2);
        }
    }

    #[test]
    fn tilted_gross_extraction_is_rejected_by_gravity_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (cand, query, _, _, mut ex) = colocated_pair(&mut rng);
        ex.pose.rotation = ex.pose.rotation.mul(&Rot3::from_euler(0.0, 0.35, 0.0));
        ex.pose.translation += Vector3::new(2.0, -1.0, 0.5);
        ex.inliers = 150;
        let mut loc = MapLocalizer::new(0, LoopThresholds::default(), [0.05; 4]);
        loc.add_keyframe(&cand);
        let (edge, outcome) = loc.loop_detection(&query, &Fixed(ex));
        assert!(edge.is_none());
        assert_eq!(outcome, LoopOutcome::GravityCheckFailed);
        assert_eq!(loc.stats.gravity_rejected, 1);
    }

    #[test]
    fn weak_and_long_extractions_are_gated() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (cand, query, _, _, ex) = colocated_pair(&mut rng);
        let mut loc = MapLocalizer::new(0, LoopThresholds::default(), [0.05; 4]);
        loc.add_keyframe(&cand);
        let weak = PoseExtraction { inliers: 5, ..ex };
        assert_eq!(loc.detect(&query, &Fixed(weak)).1, LoopOutcome::TooFewInliers);
        let mut far = ex;
        far.pose.translation += Vector3::new(40.0, 0.0, 0.0);
        assert_eq!(loc.detect(&query, &Fixed(far)).1, LoopOutcome::TooLong);
    }

    #[test]
    fn dump_then_load_restores_databases() {
        let mut loc = MapLocalizer::new(0, LoopThresholds::default(), [0.05; 4]);
        loc.add_keyframe(&kf(0, 1.0, unit(&[1.0, 2.0])));
        loc.add_keyframe(&kf(1, 1.5, unit(&[2.0, 1.0])));
        let mut buf = Vec::new();
        loc.dump(&mut buf).unwrap();
        let mut other = MapLocalizer::new(0, LoopThresholds::default(), [0.05; 4]);
        assert_eq!(other.load(buf.as_slice()).unwrap(), 2);
        assert_eq!(other.local_db.len(), 1);
        assert_eq!(other.remote_db.len(), 1);
        let a: Vec<_> = loc.remote_db.iter().map(|k| (**k).clone()).collect();
        let b: Vec<_> = other.remote_db.iter().map(|k| (**k).clone()).collect();
        assert_eq!(a, b);
    }
}
