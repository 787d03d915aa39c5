use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::DroneId;

/// How much of a drone's pose in the observer's frame is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    #[default]
    None,
    /// Position only.
    Dof3,
    /// Position and yaw.
    Dof6,
}

/// Measurements available between a reference drone k and a drone i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairEvidence {
    pub motion_k: bool,
    pub motion_i: bool,
    pub distance: bool,
    pub det_k_to_i: bool,
    pub det_i_to_k: bool,
    pub map_edge: bool,
}

/// Observability of i from k for one evidence combination.
pub fn classify(e: &PairEvidence) -> Observability {
    if e.map_edge || (e.det_k_to_i && e.det_i_to_k) {
        return Observability::Dof6;
    }
    if e.motion_k && e.motion_i && e.distance {
        return Observability::Dof6;
    }
    if e.motion_k && !e.motion_i && e.det_i_to_k {
        return Observability::Dof6;
    }
    if e.motion_k && !e.motion_i && e.distance && !e.det_i_to_k {
        return Observability::Dof3;
    }
    Observability::None
}

/// Which drone pairs share which measurements in the current graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Links {
    pub motion: BTreeSet<DroneId>,
    /// Unordered pairs, stored with the smaller id first.
    pub distance: BTreeSet<(DroneId, DroneId)>,
    /// (observer, target).
    pub detection: BTreeSet<(DroneId, DroneId)>,
    /// Unordered pairs, stored with the smaller id first.
    pub map: BTreeSet<(DroneId, DroneId)>,
}

fn unordered(a: DroneId, b: DroneId) -> (DroneId, DroneId) {
    (a.min(b), a.max(b))
}

impl Links {
    pub fn add_distance(&mut self, a: DroneId, b: DroneId) {
        if a != b {
            self.distance.insert(unordered(a, b));
        }
    }

    pub fn add_detection(&mut self, observer: DroneId, target: DroneId) {
        if observer != target {
            self.detection.insert((observer, target));
        }
    }

    pub fn add_map(&mut self, a: DroneId, b: DroneId) {
        if a != b {
            self.map.insert(unordered(a, b));
        }
    }

    pub fn evidence(&self, k: DroneId, i: DroneId) -> PairEvidence {
        PairEvidence {
            motion_k: self.motion.contains(&k),
            motion_i: self.motion.contains(&i),
            distance: self.distance.contains(&unordered(k, i)),
            det_k_to_i: self.detection.contains(&(k, i)),
            det_i_to_k: self.detection.contains(&(i, k)),
            map_edge: self.map.contains(&unordered(k, i)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub drones: BTreeMap<DroneId, Observability>,
    /// Evidence w.r.t. the observing drone.
    pub evidence: BTreeMap<DroneId, PairEvidence>,
}

impl ObservabilityReport {
    pub fn level(&self, drone: DroneId) -> Observability {
        self.drones.get(&drone).copied().unwrap_or_default()
    }
}

/// Observability of every drone in `drones` from `self_id`. A drone that is
/// 6-DoF observable serves as a reference for the others, so chains of pairs
/// propagate.
pub fn check_observability(self_id: DroneId, drones: &BTreeSet<DroneId>, links: &Links) -> ObservabilityReport {
    let mut report = ObservabilityReport::default();
    report.drones.insert(self_id, Observability::Dof6);
    for &i in drones {
        if i != self_id {
            report.evidence.insert(i, links.evidence(self_id, i));
            report.drones.insert(i, Observability::None);
        }
    }
    loop {
        let refs: Vec<DroneId> = report
            .drones
            .iter()
            .filter(|(_, o)| **o == Observability::Dof6)
            .map(|(d, _)| *d)
            .collect();
        let mut changed = false;
        for &i in drones {
            let current = report.level(i);
            if current == Observability::Dof6 {
                continue;
            }
            let best = refs
                .iter()
                .map(|&k| classify(&links.evidence(k, i)))
                .max()
                .unwrap_or_default();
            if best > current {
                report.drones.insert(i, best);
                changed = true;
            }
        }
        if !changed {
            return report;
        }
    }
}
