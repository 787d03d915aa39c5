use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Pruning;
use crate::geometry::{compose4, Pose4, Pose6};
use crate::measurements::{DetectionObservation, DistanceEdge, MapEdge, OdometryEdge};
use crate::{time_key, DroneId};

/// Pose variable identity: drone and time key.
pub type VarKey = (DroneId, i64);
pub type MapKey = ((DroneId, i64), (DroneId, i64));

/// VIO of one drone at a swarm frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameKeyframe {
    pub vio4: Pose4,
    pub vio6: Pose6,
}

/// A detection and the drone it was associated with, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub obs: DetectionObservation,
    pub target: Option<DroneId>,
}

/// Keyframes of all drones seen at `t` plus the synchronous measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmFrame {
    pub t: f64,
    pub keyframes: BTreeMap<DroneId, FrameKeyframe>,
    pub distances: Vec<DistanceEdge>,
    pub detections: Vec<DetectionRecord>,
}

impl SwarmFrame {
    pub fn key(&self) -> i64 {
        time_key(self.t)
    }
}

/// A map edge in the graph. `edge` may have been moved onto nearby frames;
/// `origin` is the key it was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMapEdge {
    pub origin: MapKey,
    pub edge: MapEdge,
}

/// Bounded set of swarm frames with their odometry chains, map edges and
/// state variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatorGraph {
    pub frames: BTreeMap<i64, SwarmFrame>,
    /// Keyed by the edge's later endpoint.
    pub odometry: BTreeMap<VarKey, OdometryEdge>,
    /// Keyed by the edge's current endpoints.
    pub map_edges: BTreeMap<MapKey, GraphMapEdge>,
    pub states: BTreeMap<VarKey, Pose4>,
    pub anchor: Option<VarKey>,
}

impl EstimatorGraph {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn drones(&self) -> BTreeSet<DroneId> {
        self.states.keys().map(|(d, _)| *d).collect()
    }

    pub fn has_var(&self, key: VarKey) -> bool {
        self.states.contains_key(&key)
    }

    /// Frame keys containing `drone`, ascending.
    pub fn frames_of(&self, drone: DroneId) -> Vec<i64> {
        self.states
            .range((drone, i64::MIN)..=(drone, i64::MAX))
            .map(|((_, k), _)| *k)
            .collect()
    }

    /// Latest frame of `drone` strictly before `key`.
    pub fn prev_of(&self, drone: DroneId, key: i64) -> Option<i64> {
        self.states
            .range((drone, i64::MIN)..(drone, key))
            .next_back()
            .map(|((_, k), _)| *k)
    }

    pub fn next_of(&self, drone: DroneId, key: i64) -> Option<i64> {
        self.states
            .range((drone, key + 1)..=(drone, i64::MAX))
            .next()
            .map(|((_, k), _)| *k)
    }

    pub fn keyframe(&self, drone: DroneId, key: i64) -> Option<&FrameKeyframe> {
        self.frames.get(&key)?.keyframes.get(&drone)
    }

    /// Adds a frame whose variables are initialized by `init`.
    pub fn insert_frame(&mut self, frame: SwarmFrame, odometry: Vec<OdometryEdge>, init: &BTreeMap<DroneId, Pose4>) {
        let key = frame.key();
        for d in frame.keyframes.keys() {
            self.states.insert((*d, key), init[d]);
        }
        for e in odometry {
            self.odometry.insert((e.drone, time_key(e.t)), e);
        }
        self.frames.insert(key, frame);
    }

    /// Removes one frame. Each drone's odometry chain is re-linked across the
    /// gap by composing the two deltas, with std-devs added in quadrature.
    /// Map edges touching the frame are returned.
    pub fn remove_frame(&mut self, key: i64) -> Option<(SwarmFrame, Vec<GraphMapEdge>)> {
        let frame = self.frames.remove(&key)?;
        for &d in frame.keyframes.keys() {
            let next = self.next_of(d, key);
            let incoming = self.odometry.remove(&(d, key));
            if let Some(n) = next {
                let outgoing = self.odometry.remove(&(d, n));
                if let (Some(a), Some(b)) = (incoming, outgoing) {
                    let mut sigma = [0.0; 4];
                    for k in 0..4 {
                        sigma[k] = a.sigma[k].hypot(b.sigma[k]);
                    }
                    self.odometry.insert(
                        (d, n),
                        OdometryEdge {
                            drone: d,
                            t_prev: a.t_prev,
                            t: b.t,
                            delta: compose4(&a.delta, &b.delta),
                            sigma,
                        },
                    );
                }
            }
            self.states.remove(&(d, key));
        }
        let touching: Vec<MapKey> = self
            .map_edges
            .keys()
            .filter(|(a, b)| a.1 == key || b.1 == key)
            .copied()
            .collect();
        let dropped = touching.iter().filter_map(|k| self.map_edges.remove(k)).collect();
        Some((frame, dropped))
    }

    /// Deletes frames until at most `m_max` remain. The anchor frame is never
    /// deleted. Returns the removed frames in deletion order.
    pub fn prune(
        &mut self,
        m_max: usize,
        policy: Pruning,
        rng: &mut impl Rng,
    ) -> Vec<(SwarmFrame, Vec<GraphMapEdge>)> {
        let mut removed = Vec::new();
        let anchor_key = self.anchor.map(|a| a.1);
        while self.frames.len() > m_max.max(1) {
            let candidates: Vec<i64> = self
                .frames
                .keys()
                .copied()
                .filter(|k| Some(*k) != anchor_key)
                .collect();
            if candidates.is_empty() {
                break;
            }
            let victim = match policy {
                Pruning::Fifo => candidates[0],
                Pruning::Random => candidates[rng.random_range(0..candidates.len())],
            };
            removed.extend(self.remove_frame(victim));
        }
        removed
    }

    /// Every consecutive pair of a drone's frames is joined by exactly one
    /// odometry edge, and every edge references existing variables.
    pub fn check_structure(&self) -> Result<(), String> {
        for d in self.drones() {
            let keys = self.frames_of(d);
            for w in keys.windows(2) {
                match self.odometry.get(&(d, w[1])) {
                    Some(e) if time_key(e.t_prev) == w[0] => {}
                    other => return Err(format!("drone {d}: chain broken at {} ({other:?})", w[1])),
                }
            }
            if let Some(first) = keys.first() {
                if self.odometry.contains_key(&(d, *first)) {
                    return Err(format!("drone {d}: dangling edge into first frame"));
                }
            }
        }
        for (key, e) in &self.odometry {
            if !self.has_var(*key) || !self.has_var((e.drone, time_key(e.t_prev))) {
                return Err(format!("odometry edge {key:?} references a missing variable"));
            }
        }
        for k in self.map_edges.keys() {
            if !self.has_var(k.0) || !self.has_var(k.1) {
                return Err(format!("map edge {k:?} references a missing variable"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::relative4;
    use crate::measurements::make_odometry_edge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(n: usize) -> (EstimatorGraph, Vec<Pose4>) {
        let mut g = EstimatorGraph::default();
        let poses: Vec<Pose4> = (0..n).map(|i| Pose4::new(i as f64 * 0.5, (i as f64).sin(), 1.0, 0.1 * i as f64)).collect();
        for (i, p) in poses.iter().enumerate() {
            let t = i as f64 * 0.1;
            let mut kfs = BTreeMap::new();
            kfs.insert(0, FrameKeyframe { vio4: *p, vio6: Pose6::identity() });
            let odo = if i > 0 {
                vec![make_odometry_edge(0, t - 0.1, t, &poses[i - 1], p, [0.1, 0.1, 0.1, 0.01])]
            } else {
                vec![]
            };
            let init = [(0, *p)].into();
            g.insert_frame(
                SwarmFrame { t, keyframes: kfs, distances: vec![], detections: vec![] },
                odo,
                &init,
            );
        }
        g.anchor = Some((0, 0));
        (g, poses)
    }

    #[test]
    fn at_capacity_nothing_is_removed() {
        let (mut g, _) = build(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(g.prune(100, Pruning::Random, &mut rng).is_empty());
        assert_eq!(g.len(), 100);
    }

    #[test]
    fn one_over_capacity_removes_one_and_relinks() {
        let (mut g, poses) = build(101);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let removed = g.prune(100, Pruning::Random, &mut rng);
        assert_eq!(removed.len(), 1);
        assert_eq!(g.len(), 100);
        g.check_structure().unwrap();
        let keys = g.frames_of(0);
        for w in keys.windows(2) {
            let e = &g.odometry[&(0, w[1])];
            let a = poses[(w[0] / 100_000) as usize];
            let b = poses[(w[1] / 100_000) as usize];
            assert!(e.delta.max_diff(&relative4(&a, &b)) < 1e-12);
        }
    }

    #[test]
    fn anchor_survives_heavy_pruning() {
        for policy in [Pruning::Random, Pruning::Fifo] {
            let (mut g, _) = build(60);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            g.prune(5, policy, &mut rng);
            assert_eq!(g.len(), 5);
            assert!(g.has_var((0, 0)));
            g.check_structure().unwrap();
        }
    }

    #[test]
    fn fifo_removes_oldest_non_anchor() {
        let (mut g, _) = build(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let removed = g.prune(4, Pruning::Fifo, &mut rng);
        assert_eq!(removed[0].0.key(), 100_000);
    }

    #[test]
    fn relinked_sigma_is_quadrature() {
        let (mut g, _) = build(3);
        g.remove_frame(100_000).unwrap();
        let e = &g.odometry[&(0, 200_000)];
        assert!((e.sigma[0] - 0.1f64.hypot(0.1)).abs() < 1e-15);
    }
}
