//! Measurement edges, their generative models, whitened residuals and
//! analytic Jacobians.
//!
//! Every residual is divided by its noise standard deviation, so the squared
//! norm is the Mahalanobis cost under a diagonal covariance.

mod residuals;

pub use residuals::{
    linearize, residual, residual_detection, residual_distance, residual_map_edge,
    residual_odometry, Linearization, Residual,
};

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative4, Pose4, Rot3};
use crate::{time_key, DroneId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("bounding box width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("target coincides with the camera centre")]
    ZeroRange,
    #[error("no state for drone {drone} at t={t}")]
    MissingState { drone: DroneId, t: f64 },
}

/// Relative 4-DoF motion of one drone between two of its keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryEdge {
    pub drone: DroneId,
    pub t_prev: f64,
    pub t: f64,
    pub delta: Pose4,
    /// Std-devs of (x, y, z, yaw).
    pub sigma: [f64; 4],
}

/// UWB range measured by drone `i` to drone `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEdge {
    pub i: DroneId,
    pub j: DroneId,
    pub t: f64,
    pub d: f64,
    pub sigma: f64,
}

/// Bearing and inverse depth of `target` seen by `observer`, expressed in the
/// observer's yaw-only body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEdge {
    pub observer: DroneId,
    pub target: DroneId,
    pub t: f64,
    pub dir: Vector3<f64>,
    pub inv_depth: f64,
    pub cam_rot: Rot3,
    pub cam_pos: Vector3<f64>,
    pub sigma_dir: f64,
    pub sigma_inv_depth: f64,
}

/// A detection before data association. The detector's identity label may
/// be wrong or missing; the estimator decides the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionObservation {
    pub observer: DroneId,
    pub t: f64,
    pub label: Option<DroneId>,
    pub dir: Vector3<f64>,
    pub inv_depth: f64,
    pub cam_rot: Rot3,
    pub cam_pos: Vector3<f64>,
    pub sigma_dir: f64,
    pub sigma_inv_depth: f64,
}

impl DetectionObservation {
    pub fn with_target(&self, target: DroneId) -> DetectionEdge {
        DetectionEdge {
            observer: self.observer,
            target,
            t: self.t,
            dir: self.dir,
            inv_depth: self.inv_depth,
            cam_rot: self.cam_rot,
            cam_pos: self.cam_pos,
            sigma_dir: self.sigma_dir,
            sigma_inv_depth: self.sigma_inv_depth,
        }
    }
}

/// Relative pose from keyframe `from` to keyframe `to`, found by place
/// recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEdge {
    pub from: (DroneId, f64),
    pub to: (DroneId, f64),
    pub rel: Pose4,
    pub sigma: [f64; 4],
    pub inliers: u32,
}

impl MapEdge {
    /// Endpoint identity used for de-duplication.
    pub fn key(&self) -> ((DroneId, i64), (DroneId, i64)) {
        (
            (self.from.0, time_key(self.from.1)),
            (self.to.0, time_key(self.to.1)),
        )
    }
}

/// Physical drone width and the virtual camera focal length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneGeometry {
    pub width: f64,
    pub focal: f64,
}

impl Default for DroneGeometry {
    fn default() -> Self {
        DroneGeometry {
            width: 0.4,
            focal: 250.0,
        }
    }
}

/// Noise levels used to whiten edges when the front-end does not supply one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefaultSigmas {
    pub distance: f64,
    pub detection_dir: f64,
    /// Fraction of the measured inverse depth.
    pub detection_inv_depth_frac: f64,
    pub map_edge: [f64; 4],
}

impl Default for DefaultSigmas {
    fn default() -> Self {
        DefaultSigmas {
            distance: 0.15,
            detection_dir: 0.02,
            detection_inv_depth_frac: 0.05,
            map_edge: [0.05, 0.05, 0.05, 0.02],
        }
    }
}

/// Any of the four edge kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementEdge {
    Odometry(OdometryEdge),
    Distance(DistanceEdge),
    Detection(DetectionEdge),
    Map(MapEdge),
}

impl MeasurementEdge {
    /// The two pose variables the edge touches, in Jacobian order.
    pub fn endpoints(&self) -> [(DroneId, f64); 2] {
        match self {
            MeasurementEdge::Odometry(e) => [(e.drone, e.t_prev), (e.drone, e.t)],
            MeasurementEdge::Distance(e) => [(e.i, e.t), (e.j, e.t)],
            MeasurementEdge::Detection(e) => [(e.observer, e.t), (e.target, e.t)],
            MeasurementEdge::Map(e) => [e.from, e.to],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MeasurementEdge::Odometry(_) | MeasurementEdge::Map(_) => 4,
            MeasurementEdge::Distance(_) => 1,
            MeasurementEdge::Detection(_) => 3,
        }
    }

    /// Odometry stays quadratic; the other kinds are wrapped in a Huber loss.
    pub fn is_robust(&self) -> bool {
        !matches!(self, MeasurementEdge::Odometry(_))
    }

    /// Same edge with every noise std-dev multiplied by `c`.
    pub fn scale_sigma(&self, c: f64) -> MeasurementEdge {
        let mut e = self.clone();
        match &mut e {
            MeasurementEdge::Odometry(o) => o.sigma.iter_mut().for_each(|s| *s *= c),
            MeasurementEdge::Map(m) => m.sigma.iter_mut().for_each(|s| *s *= c),
            MeasurementEdge::Distance(d) => d.sigma *= c,
            MeasurementEdge::Detection(d) => {
                d.sigma_dir *= c;
                d.sigma_inv_depth *= c;
            }
        }
        e
    }
}

/// Source of pose estimates keyed by drone and timestamp.
pub trait PoseLookup {
    fn pose(&self, drone: DroneId, t: f64) -> Option<Pose4>;
}

impl PoseLookup for BTreeMap<(DroneId, i64), Pose4> {
    fn pose(&self, drone: DroneId, t: f64) -> Option<Pose4> {
        self.get(&(drone, time_key(t))).copied()
    }
}

impl<F: Fn(DroneId, f64) -> Option<Pose4>> PoseLookup for F {
    fn pose(&self, drone: DroneId, t: f64) -> Option<Pose4> {
        self(drone, t)
    }
}

pub fn make_odometry_edge(
    drone: DroneId,
    t_prev: f64,
    t: f64,
    p_prev: &Pose4,
    p_now: &Pose4,
    sigma: [f64; 4],
) -> OdometryEdge {
    OdometryEdge {
        drone,
        t_prev,
        t,
        delta: relative4(p_prev, p_now),
        sigma,
    }
}

/// Converts a bounding box (centre relative to the principal point, width in
/// pixels) into a body-frame bearing and an inverse depth.
pub fn bbox_to_detection(
    center_px: Vector2<f64>,
    width_px: f64,
    geom: &DroneGeometry,
    cam_rot: &Rot3,
) -> Result<(Vector3<f64>, f64), MeasurementError> {
    if !(width_px > 0.0) {
        return Err(MeasurementError::NonPositiveWidth(width_px));
    }
    let ray = Vector3::new(center_px.x, center_px.y, geom.focal).normalize();
    Ok((cam_rot.apply(&ray), width_px / (geom.width * geom.focal)))
}

/// Noiseless detection of a target at `rel_pos_body` (observer yaw-only body
/// frame) by a camera mounted at `cam_pos` with orientation `cam_rot`.
pub fn detection_forward_model(
    rel_pos_body: &Vector3<f64>,
    cam_rot: &Rot3,
    cam_pos: &Vector3<f64>,
) -> Result<(Vector3<f64>, f64), MeasurementError> {
    let v = rel_pos_body - cam_pos;
    let range = v.norm();
    if !(range > 0.0) {
        return Err(MeasurementError::ZeroRange);
    }
    let in_cam = cam_rot.transpose().apply(&v) / range;
    Ok((cam_rot.apply(&in_cam), 1.0 / range))
}

/// Inverse of [`bbox_to_detection`]: pixel centre and width a camera would
/// report for a target in front of it. `None` if behind the image plane.
pub fn project_to_bbox(
    rel_pos_body: &Vector3<f64>,
    cam_rot: &Rot3,
    cam_pos: &Vector3<f64>,
    geom: &DroneGeometry,
) -> Option<(Vector2<f64>, f64)> {
    let v = rel_pos_body - cam_pos;
    let c = cam_rot.transpose().apply(&v);
    if c.z <= 0.0 {
        return None;
    }
    let center = Vector2::new(geom.focal * c.x / c.z, geom.focal * c.y / c.z);
    Some((center, geom.width * geom.focal / v.norm()))
}

/// Huber loss on a squared norm `s`.
pub fn huber(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        s
    } else {
        2.0 * delta * s.sqrt() - delta * delta
    }
}

/// `d huber / d s`, used as the reweighting factor of the robust solver.
pub fn huber_weight(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        1.0
    } else {
        delta / s.sqrt()
    }
}

/// Two unit vectors spanning the plane orthogonal to the unit vector `u`.
///
/// Branchless construction (Duff et al.), deterministic in `u` and well
/// conditioned everywhere on the sphere.
pub fn tangent_basis(u: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let sign = 1.0f64.copysign(u.z);
    let a = -1.0 / (sign + u.z);
    let b = u.x * u.y * a;
    let b1 = Vector3::new(1.0 + sign * u.x * u.x * a, sign * b, -sign * u.x);
    let b2 = Vector3::new(b, sign + u.y * u.y * a, -u.y);
    (b1, b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compose4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn odometry_edge_cases() {
        let p = Pose4::new(1.0, 2.0, 3.0, 0.5);
        let e = make_odometry_edge(0, 0.0, 1.0, &p, &p, [1.0; 4]);
        assert!(e.delta.max_diff(&Pose4::identity()) < 1e-15);
        let e = make_odometry_edge(
            0,
            0.0,
            1.0,
            &Pose4::identity(),
            &Pose4::new(1.0, 0.0, 0.0, 0.0),
            [1.0; 4],
        );
        assert_eq!(e.delta, Pose4::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn odometry_edge_recomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = Pose4::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0, rng.random_range(-PI..PI));
            let b = Pose4::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 2.0, rng.random_range(-PI..PI));
            let e = make_odometry_edge(1, 0.0, 0.1, &a, &b, [0.1; 4]);
            assert!(compose4(&a, &e.delta).max_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn bbox_cases() {
        let g = DroneGeometry { width: 0.4, focal: 250.0 };
        let (dir, inv) = bbox_to_detection(Vector2::new(0.0, 0.0), 50.0, &g, &Rot3::identity()).unwrap();
        assert!((dir - Vector3::z()).norm() < 1e-15);
        assert!((inv - 0.5).abs() < 1e-15);

        let (dir, _) = bbox_to_detection(Vector2::new(250.0, 0.0), 10.0, &g, &Rot3::identity()).unwrap();
        assert!((dir - Vector3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-15);

        assert_eq!(
            bbox_to_detection(Vector2::zeros(), 0.0, &g, &Rot3::identity()),
            Err(MeasurementError::NonPositiveWidth(0.0))
        );
    }

    #[test]
    fn bbox_width_for_known_distance() {
        // width = s * f / distance
        let g = DroneGeometry { width: 0.4, focal: 250.0 };
        let (_, w) = project_to_bbox(&Vector3::new(0.0, 0.0, 4.0), &Rot3::identity(), &Vector3::zeros(), &g).unwrap();
        assert!((w - 25.0).abs() < 1e-12);
    }

    #[test]
    fn forward_model_cases() {
        let (dir, inv) =
            detection_forward_model(&Vector3::new(0.0, 0.0, 2.0), &Rot3::identity(), &Vector3::zeros()).unwrap();
        assert!((dir - Vector3::z()).norm() < 1e-15);
        assert!((inv - 0.5).abs() < 1e-15);
        let (_, inv) =
            detection_forward_model(&Vector3::new(3.0, 4.0, 0.0), &Rot3::identity(), &Vector3::zeros()).unwrap();
        assert!((inv - 0.2).abs() < 1e-15);
        assert_eq!(
            detection_forward_model(&Vector3::new(0.1, 0.0, 0.0), &Rot3::identity(), &Vector3::new(0.1, 0.0, 0.0)),
            Err(MeasurementError::ZeroRange)
        );
    }

    #[test]
    fn forward_model_round_trips_through_bbox() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DroneGeometry::default();
        let mut checked = 0;
        while checked < 100 {
            let cam_rot = Rot3::from_euler(
                rng.random_range(-PI..PI),
                rng.random_range(-1.0..1.0),
                rng.random_range(-PI..PI),
            );
            let cam_pos = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.05);
            let rel = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-3.0..3.0));
            let Some((center, width)) = project_to_bbox(&rel, &cam_rot, &cam_pos, &g) else {
                continue;
            };
            let (d1, s1) = detection_forward_model(&rel, &cam_rot, &cam_pos).unwrap();
            let (d2, s2) = bbox_to_detection(center, width, &g, &cam_rot).unwrap();
            assert!((d1 - d2).norm() < 1e-9);
            assert!((s1 - s2).abs() < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn huber_cases() {
        assert_eq!(huber(0.25, 1.0), 0.25);
        assert_eq!(huber(4.0, 1.0), 3.0);
    }

    #[test]
    fn huber_continuous_and_c1_at_knee() {
        for delta in [0.5, 1.0, 2.0] {
            let s0 = delta * delta;
            let h = 1e-7;
            let left = huber(s0 - h, delta);
            let right = huber(s0 + h, delta);
            assert!((huber(s0, delta) - left).abs() < 2e-7);
            assert!((right - huber(s0, delta)).abs() < 2e-7);
            let dl = (huber(s0, delta) - huber(s0 - h, delta)) / h;
            let dr = (huber(s0 + h, delta) - huber(s0, delta)) / h;
            assert!((dl - dr).abs() < 1e-6, "{dl} vs {dr}");
        }
    }

    #[test]
    fn huber_monotone_concave_tail() {
        let delta = 1.0;
        let mut prev = 0.0;
        let mut s = 0.0;
        while s < 50.0 {
            let v = huber(s, delta);
            assert!(v >= prev);
            prev = v;
            if s > 1.0 {
                let h = 1e-3;
                let second = huber(s + h, delta) - 2.0 * v + huber(s - h, delta);
                assert!(second <= 1e-12);
            }
            s += 0.05;
        }
    }

    #[test]
    fn tangent_basis_axes() {
        for u in [Vector3::z(), Vector3::x(), -Vector3::z(), Vector3::y()] {
            let (b1, b2) = tangent_basis(&u);
            assert!(b1.dot(&u).abs() < 1e-12);
            assert!(b2.dot(&u).abs() < 1e-12);
            assert!(b1.dot(&b2).abs() < 1e-12);
            assert!((b1.norm() - 1.0).abs() < 1e-12 && (b2.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_basis_gram_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let u = random_unit(&mut rng);
            let (b1, b2) = tangent_basis(&u);
            let m = nalgebra::Matrix3::from_columns(&[b1, b2, u]);
            let gram = m.transpose() * m;
            assert!((gram - nalgebra::Matrix3::identity()).abs().max() < 1e-10);
            assert_eq!(tangent_basis(&u), (b1, b2));
        }
    }
}
