use serde::{Deserialize, Serialize};

use super::solver::SolverOptions;
use crate::maploc::LoopThresholds;
use crate::measurements::DefaultSigmas;

/// Which frame to delete when the graph is over capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pruning {
    /// Uniformly random non-anchor frame, from a seeded stream.
    #[default]
    Random,
    /// Oldest non-anchor frame.
    Fifo,
}

impl std::str::FromStr for Pruning {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Pruning::Random),
            "fifo" => Ok(Pruning::Fifo),
            _ => Err(format!("unknown pruning policy {s:?}, expected random or fifo")),
        }
    }
}

/// Which measurement kinds enter the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeSwitches {
    pub uwb: bool,
    pub detection: bool,
    pub map: bool,
}

impl Default for EdgeSwitches {
    fn default() -> Self {
        EdgeSwitches {
            uwb: true,
            detection: true,
            map: true,
        }
    }
}

/// Per-drone estimator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Rate of candidate swarm frames, Hz.
    pub frame_hz: f64,
    /// A frame at time t is assembled at t + frame_delay so that broadcasts
    /// for t have arrived.
    pub frame_delay: f64,
    pub m_max: usize,
    pub d_kf: f64,
    pub psi_kf: f64,
    pub t_kf: f64,
    /// VIO path length over `motion_window` that counts as motion.
    pub d_mot: f64,
    pub motion_window: f64,
    pub h_max: f64,
    pub tau_bidir: f64,
    pub tau_res: f64,
    pub n_init: usize,
    pub theta_assoc: f64,
    /// Odometry std-dev is `frac * step + min` for position and yaw.
    pub odom_pos_frac: f64,
    pub odom_pos_min: f64,
    pub odom_yaw_frac: f64,
    pub odom_yaw_min: f64,
    pub sigmas: DefaultSigmas,
    pub loops: LoopThresholds,
    /// A map edge endpoint that is not a graph frame is moved to the nearest
    /// frame of the same drone within this many seconds.
    pub reanchor_gap: f64,
    /// Remote VIO older than this is not propagated, seconds.
    pub t_stale: f64,
    pub pruning: Pruning,
    pub edges: EdgeSwitches,
    pub solver: SolverOptions,
    /// Seed of the pruning and restart streams. Shared by all drones so that
    /// identical inputs give identical graphs.
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            frame_hz: 10.0,
            frame_delay: 0.1,
            m_max: 100,
            d_kf: 0.3,
            psi_kf: 10f64.to_radians(),
            t_kf: 2.0,
            d_mot: 0.5,
            motion_window: 10.0,
            h_max: 2.0,
            tau_bidir: 0.3,
            tau_res: 3.0,
            n_init: 8,
            theta_assoc: 10f64.to_radians(),
            odom_pos_frac: 0.02,
            odom_pos_min: 0.005,
            odom_yaw_frac: 0.001,
            odom_yaw_min: 0.002,
            sigmas: DefaultSigmas::default(),
            loops: LoopThresholds::default(),
            reanchor_gap: 3.0,
            t_stale: 0.5,
            pruning: Pruning::Random,
            edges: EdgeSwitches::default(),
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn odometry_sigma(&self, step: f64) -> [f64; 4] {
        let p = self.odom_pos_frac * step + self.odom_pos_min;
        let y = self.odom_yaw_frac * step + self.odom_yaw_min;
        [p, p, p, y]
    }
}
