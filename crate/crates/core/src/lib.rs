//! Decentralized state estimation for drone swarms.
//!
//! Each drone runs its own [`estimator::Estimator`], fusing 4-DoF VIO
//! increments, UWB ranges, visual detections of other drones and map-based
//! (place recognition) edges in a sliding pose graph. The [`simworld`] and
//! [`netsim`] modules provide a synthetic world and a lossy broadcast fabric so
//! the whole pipeline can be exercised without hardware; [`eval`] runs
//! scenarios and scores them.

pub mod estimator;
pub mod eval;
pub mod geometry;
pub mod maploc;
pub mod measurements;
pub mod netsim;
pub mod simworld;

/// Drone identifier.
pub type DroneId = u32;

/// Integer microsecond key for a timestamp in seconds, used wherever
/// timestamps index maps.
pub fn time_key(t: f64) -> i64 {
    (t * 1e6).round() as i64
}
