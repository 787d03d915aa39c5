use nalgebra::{Matrix3, Matrix4, RowVector3, Vector3, Vector4};

use super::{
    tangent_basis, DetectionEdge, DistanceEdge, MapEdge, MeasurementEdge, MeasurementError,
    OdometryEdge, PoseLookup,
};
use crate::geometry::{relative4, rotate_z_inv, rotate_z_inv_dyaw, Pose4};

/// Whitened residual; only the first `dim` entries are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub dim: usize,
    pub values: Vector4<f64>,
}

impl Residual {
    pub fn as_slice(&self) -> &[f64] {
        &self.values.as_slice()[..self.dim]
    }

    pub fn squared_norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }
}

/// Residual plus its Jacobians with respect to the two endpoint poses.
/// Columns are (x, y, z, yaw); rows past `residual.dim` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub residual: Residual,
    pub jacobians: [Matrix4<f64>; 2],
}

fn rz_inv_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `relative4(z, relative4(a, b))` whitened, with Jacobians.
fn pose_residual(
    z: &Pose4,
    a: &Pose4,
    b: &Pose4,
    sigma: &[f64; 4],
    with_jacobians: bool,
) -> Linearization {
    let e = relative4(z, &relative4(a, b));
    let mut values = Vector4::new(e.x, e.y, e.z, e.yaw);
    for k in 0..4 {
        values[k] /= sigma[k];
    }
    let mut jacobians = [Matrix4::zeros(); 2];
    if with_jacobians {
        let heading = a.yaw + z.yaw;
        let rot = rz_inv_matrix(heading);
        let dyaw = rotate_z_inv_dyaw(heading, &(b.translation() - a.translation()));
        for r in 0..3 {
            for c in 0..3 {
                jacobians[0][(r, c)] = -rot[(r, c)] / sigma[r];
                jacobians[1][(r, c)] = rot[(r, c)] / sigma[r];
            }
            jacobians[0][(r, 3)] = dyaw[r] / sigma[r];
        }
        jacobians[0][(3, 3)] = -1.0 / sigma[3];
        jacobians[1][(3, 3)] = 1.0 / sigma[3];
    }
    Linearization {
        residual: Residual { dim: 4, values },
        jacobians,
    }
}

fn distance_terms(e: &DistanceEdge, a: &Pose4, b: &Pose4, with_jacobians: bool) -> Linearization {
    let diff = a.translation() - b.translation();
    let n = diff.norm();
    let mut values = Vector4::zeros();
    values[0] = (e.d - n) / e.sigma;
    let mut jacobians = [Matrix4::zeros(); 2];
    if with_jacobians && n > 0.0 {
        for c in 0..3 {
            let g = diff[c] / (e.sigma * n);
            jacobians[0][(0, c)] = -g;
            jacobians[1][(0, c)] = g;
        }
    }
    Linearization {
        residual: Residual { dim: 1, values },
        jacobians,
    }
}

fn detection_terms(
    e: &DetectionEdge,
    a: &Pose4,
    b: &Pose4,
    with_jacobians: bool,
) -> Result<Linearization, MeasurementError> {
    let world_diff = b.translation() - a.translation();
    let p = rotate_z_inv(a.yaw, &world_diff) - e.cam_pos;
    let n = p.norm();
    if !(n > 1e-9) {
        return Err(MeasurementError::ZeroRange);
    }
    let u = p / n;
    let (b1, b2) = tangent_basis(&e.dir);
    let diff = e.dir - u;
    let mut values = Vector4::zeros();
    values[0] = b1.dot(&diff) / e.sigma_dir;
    values[1] = b2.dot(&diff) / e.sigma_dir;
    values[2] = (e.inv_depth - 1.0 / n) / e.sigma_inv_depth;

    let mut jacobians = [Matrix4::zeros(); 2];
    if with_jacobians {
        let du_dp = (Matrix3::identity() - u * u.transpose()) / n;
        let rows: [RowVector3<f64>; 3] = [
            -(b1.transpose() * du_dp) / e.sigma_dir,
            -(b2.transpose() * du_dp) / e.sigma_dir,
            p.transpose() / (n * n * n * e.sigma_inv_depth),
        ];
        let dp_dxb = rz_inv_matrix(a.yaw);
        let dp_dyaw: Vector3<f64> = rotate_z_inv_dyaw(a.yaw, &world_diff);
        for (r, row) in rows.iter().enumerate() {
            let wrt_b = row * dp_dxb;
            for c in 0..3 {
                jacobians[0][(r, c)] = -wrt_b[c];
                jacobians[1][(r, c)] = wrt_b[c];
            }
            jacobians[0][(r, 3)] = row.dot(&dp_dyaw.transpose());
        }
    }
    Ok(Linearization {
        residual: Residual { dim: 3, values },
        jacobians,
    })
}

fn evaluate(
    edge: &MeasurementEdge,
    a: &Pose4,
    b: &Pose4,
    with_jacobians: bool,
) -> Result<Linearization, MeasurementError> {
    Ok(match edge {
        MeasurementEdge::Odometry(e) => pose_residual(&e.delta, a, b, &e.sigma, with_jacobians),
        MeasurementEdge::Map(e) => pose_residual(&e.rel, a, b, &e.sigma, with_jacobians),
        MeasurementEdge::Distance(e) => distance_terms(e, a, b, with_jacobians),
        MeasurementEdge::Detection(e) => detection_terms(e, a, b, with_jacobians)?,
    })
}

/// Whitened residual of `edge` with endpoint poses `a` and `b` (the order of
/// [`MeasurementEdge::endpoints`]).
pub fn residual(edge: &MeasurementEdge, a: &Pose4, b: &Pose4) -> Result<Residual, MeasurementError> {
    evaluate(edge, a, b, false).map(|l| l.residual)
}

/// Residual and analytic Jacobians.
pub fn linearize(
    edge: &MeasurementEdge,
    a: &Pose4,
    b: &Pose4,
) -> Result<Linearization, MeasurementError> {
    evaluate(edge, a, b, true)
}

fn lookup(
    states: &impl PoseLookup,
    (drone, t): (crate::DroneId, f64),
) -> Result<Pose4, MeasurementError> {
    states
        .pose(drone, t)
        .ok_or(MeasurementError::MissingState { drone, t })
}

pub fn residual_odometry(
    edge: &OdometryEdge,
    states: &impl PoseLookup,
) -> Result<Vector4<f64>, MeasurementError> {
    let a = lookup(states, (edge.drone, edge.t_prev))?;
    let b = lookup(states, (edge.drone, edge.t))?;
    Ok(pose_residual(&edge.delta, &a, &b, &edge.sigma, false).residual.values)
}

pub fn residual_map_edge(
    edge: &MapEdge,
    states: &impl PoseLookup,
) -> Result<Vector4<f64>, MeasurementError> {
    let a = lookup(states, edge.from)?;
    let b = lookup(states, edge.to)?;
    Ok(pose_residual(&edge.rel, &a, &b, &edge.sigma, false).residual.values)
}

pub fn residual_distance(
    edge: &DistanceEdge,
    states: &impl PoseLookup,
) -> Result<f64, MeasurementError> {
    let a = lookup(states, (edge.i, edge.t))?;
    let b = lookup(states, (edge.j, edge.t))?;
    Ok(distance_terms(edge, &a, &b, false).residual.values[0])
}

pub fn residual_detection(
    edge: &DetectionEdge,
    states: &impl PoseLookup,
) -> Result<Vector3<f64>, MeasurementError> {
    let a = lookup(states, (edge.observer, edge.t))?;
    let b = lookup(states, (edge.target, edge.t))?;
    let r = detection_terms(edge, &a, &b, false)?.residual.values;
    Ok(Vector3::new(r[0], r[1], r[2]))
}
