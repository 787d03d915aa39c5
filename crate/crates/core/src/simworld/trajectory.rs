use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{rotate_z_inv, Pose6, Rot3};

const GRAVITY: f64 = 9.81;

/// Motion primitive of one drone. Times are relative to the drone's start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Static {
        position: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    Circle {
        center: [f64; 3],
        radius: f64,
        /// Seconds per revolution; negative turns clockwise.
        period: f64,
        #[serde(default)]
        phase: f64,
        /// Vertical oscillation added to the circle.
        #[serde(default)]
        z_amplitude: f64,
        #[serde(default = "default_z_period")]
        z_period: f64,
        /// Fixed heading; follows the velocity when absent.
        #[serde(default)]
        yaw: Option<f64>,
    },
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        /// Hz per axis.
        frequency: [f64; 3],
        #[serde(default)]
        phase: [f64; 3],
        #[serde(default)]
        yaw: Option<f64>,
    },
    /// Catmull-Rom style C1 spline through the points at roughly `speed`.
    Waypoints {
        points: Vec<[f64; 3]>,
        speed: f64,
        #[serde(default)]
        closed: bool,
        #[serde(default)]
        yaw: Option<f64>,
    },
}

fn default_z_period() -> f64 {
    10.0
}

/// Position and its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

#[derive(Debug, Clone)]
struct Spline {
    knots: Vec<f64>,
    points: Vec<Vector3<f64>>,
    tangents: Vec<Vector3<f64>>,
    closed: bool,
}

impl Spline {
    fn new(raw: &[[f64; 3]], speed: f64, closed: bool) -> Result<Spline, SimError> {
        if raw.len() < 2 {
            return Err(SimError::InfeasibleTrajectory("need at least two waypoints".into()));
        }
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(SimError::InfeasibleTrajectory(format!("speed {speed} must be positive")));
        }
        let mut points: Vec<Vector3<f64>> = raw.iter().map(|p| Vector3::from(*p)).collect();
        if closed {
            points.push(points[0]);
        }
        let mut knots = vec![0.0];
        for w in points.windows(2) {
            let len = (w[1] - w[0]).norm();
            if !(len > 1e-6) {
                return Err(SimError::InfeasibleTrajectory(
                    "consecutive waypoints coincide".into(),
                ));
            }
            knots.push(knots.last().copied().unwrap_or(0.0) + len / speed);
        }
        let n = points.len();
        let mut tangents = vec![Vector3::zeros(); n];
        for k in 0..n {
            let (prev, next, dt) = if k > 0 && k + 1 < n {
                (points[k - 1], points[k + 1], knots[k + 1] - knots[k - 1])
            } else if closed {
                // Wrap around the seam: neighbours of the shared endpoint.
                let total = knots[n - 1];
                (
                    points[n - 2],
                    points[1],
                    (total - knots[n - 2]) + knots[1],
                )
            } else {
                continue;
            };
            tangents[k] = (next - prev) / dt;
        }
        Ok(Spline {
            knots,
            points,
            tangents,
            closed,
        })
    }

    fn duration(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    fn eval(&self, t: f64) -> Kinematics {
        let total = self.duration();
        let t = if self.closed {
            t.rem_euclid(total)
        } else if t >= total {
            return Kinematics {
                p: self.points[self.points.len() - 1],
                v: Vector3::zeros(),
                a: Vector3::zeros(),
            };
        } else {
            t.max(0.0)
        };
        let seg = match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            i => (i - 1).min(self.points.len() - 2),
        };
        let h = self.knots[seg + 1] - self.knots[seg];
        let s = (t - self.knots[seg]) / h;
        let (p0, p1) = (self.points[seg], self.points[seg + 1]);
        let (m0, m1) = (self.tangents[seg] * h, self.tangents[seg + 1] * h);
        let (s2, s3) = (s * s, s * s * s);
        let p = p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + m0 * (s3 - 2.0 * s2 + s)
            + p1 * (-2.0 * s3 + 3.0 * s2)
            + m1 * (s3 - s2);
        let dp = p0 * (6.0 * s2 - 6.0 * s) + m0 * (3.0 * s2 - 4.0 * s + 1.0)
            + p1 * (-6.0 * s2 + 6.0 * s)
            + m1 * (3.0 * s2 - 2.0 * s);
        let ddp = p0 * (12.0 * s - 6.0) + m0 * (6.0 * s - 4.0) + p1 * (-12.0 * s + 6.0) + m1 * (6.0 * s - 2.0);
        Kinematics {
            p,
            v: dp / h,
            a: ddp / (h * h),
        }
    }
}

/// Evaluates a [`TrajectorySpec`] and derives attitude from it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    spec: TrajectorySpec,
    spline: Option<Spline>,
}

impl Trajectory {
    pub fn new(spec: TrajectorySpec) -> Result<Trajectory, SimError> {
        let bad = |m: &str| Err(SimError::InfeasibleTrajectory(m.to_string()));
        let spline = match &spec {
            TrajectorySpec::Static { .. } => None,
            TrajectorySpec::Circle {
                radius,
                period,
                z_period,
                ..
            } => {
                if !(*radius >= 0.0) || *period == 0.0 || !period.is_finite() || *z_period == 0.0 {
                    return bad("circle needs radius >= 0 and nonzero periods");
                }
                None
            }
            TrajectorySpec::Lissajous { frequency, .. } => {
                if frequency.iter().any(|f| !f.is_finite()) {
                    return bad("lissajous frequencies must be finite");
                }
                None
            }
            TrajectorySpec::Waypoints {
                points,
                speed,
                closed,
                ..
            } => Some(Spline::new(points, *speed, *closed)?),
        };
        Ok(Trajectory { spec, spline })
    }

    pub fn fixed_yaw(&self) -> Option<f64> {
        match &self.spec {
            TrajectorySpec::Static { yaw, .. } => Some(*yaw),
            TrajectorySpec::Circle { yaw, .. }
            | TrajectorySpec::Lissajous { yaw, .. }
            | TrajectorySpec::Waypoints { yaw, .. } => *yaw,
        }
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        match &self.spec {
            TrajectorySpec::Static { position, .. } => Kinematics {
                p: Vector3::from(*position),
                v: Vector3::zeros(),
                a: Vector3::zeros(),
            },
            TrajectorySpec::Circle {
                center,
                radius,
                period,
                phase,
                z_amplitude,
                z_period,
                ..
            } => {
                let w = std::f64::consts::TAU / period;
                let th = w * t + phase;
                let (s, c) = th.sin_cos();
                let wz = std::f64::consts::TAU / z_period;
                let (sz, cz) = (wz * t).sin_cos();
                Kinematics {
                    p: Vector3::from(*center) + Vector3::new(radius * c, radius * s, z_amplitude * sz),
                    v: Vector3::new(-radius * w * s, radius * w * c, z_amplitude * wz * cz),
                    a: Vector3::new(
                        -radius * w * w * c,
                        -radius * w * w * s,
                        -z_amplitude * wz * wz * sz,
                    ),
                }
            }
            TrajectorySpec::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
                ..
            } => {
                let mut k = Kinematics {
                    p: Vector3::from(*center),
                    v: Vector3::zeros(),
                    a: Vector3::zeros(),
                };
                for ax in 0..3 {
                    let w = std::f64::consts::TAU * frequency[ax];
                    let (s, c) = (w * t + phase[ax]).sin_cos();
                    k.p[ax] += amplitude[ax] * s;
                    k.v[ax] = amplitude[ax] * w * c;
                    k.a[ax] = -amplitude[ax] * w * w * s;
                }
                k
            }
            TrajectorySpec::Waypoints { .. } => match &self.spline {
                Some(s) => s.eval(t),
                None => unreachable!("waypoint trajectories always carry a spline"),
            },
        }
    }

    /// Samples `n` poses at `dt` spacing starting at trajectory time 0.
    /// Heading follows the horizontal velocity unless fixed; it is held while
    /// the drone hovers. Roll and pitch align the thrust axis with the
    /// specific force.
    pub fn sample(&self, n: usize, dt: f64, v_max: f64) -> Result<Vec<Pose6>, SimError> {
        let mut out = Vec::with_capacity(n);
        // Start with the heading of the first motion so there is no jump
        // when a drone leaves hover.
        let mut heading = self.fixed_yaw().or_else(|| {
            (0..n).find_map(|k| {
                let v = self.kinematics(k as f64 * dt).v;
                (v.xy().norm() > 1e-3).then(|| v.y.atan2(v.x))
            })
        });
        let mut prev: Option<Vector3<f64>> = None;
        for k in 0..n {
            let t = k as f64 * dt;
            let kin = self.kinematics(t);
            let speed = kin.v.norm();
            if speed > v_max * (1.0 + 1e-9) {
                return Err(SimError::InfeasibleTrajectory(format!(
                    "speed {speed:.3} m/s at t={t:.2} exceeds v_max {v_max}"
                )));
            }
            if let Some(p) = prev {
                if (kin.p - p).norm() >= v_max * dt {
                    return Err(SimError::InfeasibleTrajectory(format!(
                        "position jump at t={t:.2}"
                    )));
                }
            }
            prev = Some(kin.p);
            let yaw = match self.fixed_yaw() {
                Some(y) => y,
                None => {
                    let horiz = kin.v.xy().norm();
                    if horiz > 1e-3 {
                        heading = Some(kin.v.y.atan2(kin.v.x));
                    }
                    heading.unwrap_or(0.0)
                }
            };
            let f = rotate_z_inv(yaw, &(kin.a + Vector3::new(0.0, 0.0, GRAVITY)));
            let pitch = f.x.atan2(f.z);
            let roll = (-f.y).atan2(f.x.hypot(f.z));
            out.push(Pose6::new(Rot3::from_euler(roll, pitch, yaw), kin.p));
        }
        Ok(out)
    }
}
