//! Error statistics over time-aligned pose series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative4, wrap_angle, Pose4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("the series have no timestamps in common")]
    EmptyOverlap,
    #[error("trajectory has zero length")]
    ZeroLength,
}

/// A pose sample.
pub type Sample = (f64, Pose4);

/// Per-axis and yaw RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub axes: [f64; 3],
    pub yaw: f64,
    pub samples: usize,
}

impl RelativeError {
    /// Norm of the per-axis RMSE vector, the RMSE of the position error.
    pub fn position(&self) -> f64 {
        self.axes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    pub position: f64,
    pub yaw: f64,
    pub samples: usize,
}

/// Pairs of samples whose timestamps agree within `tol`. `b` must be sorted.
pub fn align<'a>(a: &'a [Sample], b: &'a [Sample], tol: f64) -> Vec<(&'a Pose4, &'a Pose4)> {
    let mut out = Vec::new();
    for (t, p) in a {
        let i = b.partition_point(|(s, _)| *s < *t);
        let near = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| b.get(j))
            .min_by(|x, y| (x.0 - t).abs().total_cmp(&(y.0 - t).abs()));
        if let Some((s, q)) = near {
            if (s - t).abs() <= tol {
                out.push((p, q));
            }
        }
    }
    out
}

/// RMSE of estimated relative poses against true ones. Each item is the
/// (estimate, truth) relative pose of a target in the observer's body frame.
pub fn compute_re(pairs: &[(Pose4, Pose4)]) -> Result<RelativeError, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyOverlap);
    }
    let mut sq = [0.0; 4];
    for (est, gt) in pairs {
        let d = est.translation() - gt.translation();
        for k in 0..3 {
            sq[k] += d[k] * d[k];
        }
        sq[3] += wrap_angle(est.yaw - gt.yaw).powi(2);
    }
    let n = pairs.len() as f64;
    Ok(RelativeError {
        axes: [(sq[0] / n).sqrt(), (sq[1] / n).sqrt(), (sq[2] / n).sqrt()],
        yaw: (sq[3] / n).sqrt(),
        samples: pairs.len(),
    })
}

/// Relative pose of `target` in `observer`'s body frame for paired samples.
pub fn relative_series(observer: &[(Pose4, Pose4)], target: &[(Pose4, Pose4)]) -> Vec<(Pose4, Pose4)> {
    observer
        .iter()
        .zip(target)
        .map(|((ek, gk), (ei, gi))| (relative4(ek, ei), relative4(gk, gi)))
        .collect()
}

/// Position and yaw RMSE of a trajectory already expressed in the truth's
/// frame. No alignment is applied.
pub fn compute_ate(pairs: &[(Pose4, Pose4)]) -> Result<TrajectoryError, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyOverlap);
    }
    let n = pairs.len() as f64;
    let pos = pairs
        .iter()
        .map(|(e, g)| (e.translation() - g.translation()).norm_squared())
        .sum::<f64>();
    let yaw = pairs.iter().map(|(e, g)| wrap_angle(e.yaw - g.yaw).powi(2)).sum::<f64>();
    Ok(TrajectoryError {
        position: (pos / n).sqrt(),
        yaw: (yaw / n).sqrt(),
        samples: pairs.len(),
    })
}

pub fn path_length(poses: &[Pose4]) -> f64 {
    poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .sum()
}

/// Final position error over the true path length.
pub fn compute_drift(est_final: &Pose4, gt: &[Pose4]) -> Result<f64, MetricError> {
    let len = path_length(gt);
    let last = gt.last().ok_or(MetricError::EmptyOverlap)?;
    if !(len > 0.0) {
        return Err(MetricError::ZeroLength);
    }
    Ok((est_final.translation() - last.translation()).norm() / len)
}
