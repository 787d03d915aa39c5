//! Robust Levenberg-Marquardt over 4-DoF pose variables.
//!
//! Cost is `½ Σ ρ(‖r‖²)` with ρ the Huber loss for robust edges and the
//! identity otherwise. Each iteration linearizes with IRLS weights `ρ'(s)`
//! and solves the damped normal equations `(H + λ·diag H) δ = −g` by block
//! Cholesky.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::sparse::{minimum_degree_order, BlockCholesky, BlockSymmetric};
use crate::geometry::Pose4;
use crate::measurements::{huber, huber_weight, linearize, residual, MeasurementEdge};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Infinity norm of the gradient.
    pub gradient_tol: f64,
    pub relative_cost_tol: f64,
    pub step_tol: f64,
    pub huber_delta: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 50,
            gradient_tol: 1e-8,
            relative_cost_tol: 1e-9,
            step_tol: 1e-12,
            huber_delta: 1.0,
            initial_lambda: 1e-4,
            max_lambda: 1e16,
        }
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    CostDecrease,
    StepSize,
    ZeroCost,
    /// No step can decrease the cost at working precision.
    Stalled,
    NoVariables,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub accepted: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
}

impl SolveStats {
    pub fn converged(&self) -> bool {
        !matches!(self.termination, Termination::MaxIterations | Termination::Diverged)
    }
}

/// A least-squares problem over `states`. Edges index into `states` in the
/// order of [`MeasurementEdge::endpoints`].
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub states: Vec<Pose4>,
    pub fixed: Vec<bool>,
    pub frozen_yaw: Vec<bool>,
    pub edges: Vec<(usize, usize, &'a MeasurementEdge)>,
}

impl<'a> Problem<'a> {
    pub fn new(states: Vec<Pose4>) -> Self {
        let n = states.len();
        Problem {
            states,
            fixed: vec![false; n],
            frozen_yaw: vec![false; n],
            edges: Vec::new(),
        }
    }

    /// Robust cost of one edge at `states`; zero for degenerate geometry.
    pub fn edge_cost(&self, states: &[Pose4], e: usize, delta: f64) -> f64 {
        let (a, b, edge) = self.edges[e];
        match residual(edge, &states[a], &states[b]) {
            Ok(r) => {
                let s = r.squared_norm();
                0.5 * if edge.is_robust() { huber(s, delta) } else { s }
            }
            Err(_) => 0.0,
        }
    }

    pub fn cost(&self, states: &[Pose4], delta: f64) -> f64 {
        (0..self.edges.len()).map(|e| self.edge_cost(states, e, delta)).sum()
    }

    /// Whitened squared residual norm of every edge at the current states,
    /// `None` where the residual is undefined.
    pub fn squared_residuals(&self) -> Vec<Option<f64>> {
        self.edges
            .iter()
            .map(|(a, b, edge)| {
                residual(edge, &self.states[*a], &self.states[*b])
                    .ok()
                    .map(|r| r.squared_norm())
            })
            .collect()
    }
}

struct Normal {
    h: BlockSymmetric,
    g: Vec<Vector4<f64>>,
}

fn build_normal(p: &Problem, states: &[Pose4], free: &[Option<usize>], n_free: usize, delta: f64) -> Normal {
    let mut h = BlockSymmetric::zeros(n_free);
    let mut g = vec![Vector4::zeros(); n_free];
    for (a, b, edge) in &p.edges {
        let Ok(lin) = linearize(edge, &states[*a], &states[*b]) else {
            continue;
        };
        let r = lin.residual.values;
        let w = if edge.is_robust() {
            huber_weight(lin.residual.squared_norm(), delta)
        } else {
            1.0
        };
        let mut jac = lin.jacobians;
        for (k, v) in [*a, *b].into_iter().enumerate() {
            if p.frozen_yaw[v] {
                jac[k].set_column(3, &Vector4::zeros());
            }
        }
        let (fa, fb) = (free[*a], free[*b]);
        let (ja, jb) = (jac[0], jac[1]);
        if let Some(ia) = fa {
            g[ia] += w * ja.transpose() * r;
            h.add(ia, ia, &(w * ja.transpose() * ja));
        }
        if let Some(ib) = fb {
            g[ib] += w * jb.transpose() * r;
            h.add(ib, ib, &(w * jb.transpose() * jb));
        }
        if let (Some(ia), Some(ib)) = (fa, fb) {
            let m: Matrix4<f64> = w * ja.transpose() * jb;
            if ia == ib {
                h.add(ia, ia, &(m + m.transpose()));
            } else {
                h.add(ia, ib, &m);
            }
        }
    }
    for (v, f) in free.iter().enumerate() {
        if let (Some(i), true) = (f, p.frozen_yaw[v]) {
            h.diag_mut(*i)[(3, 3)] = 1.0;
            g[*i][3] = 0.0;
        }
    }
    Normal { h, g }
}

fn apply_step(states: &[Pose4], free: &[Option<usize>], step: &[Vector4<f64>]) -> Vec<Pose4> {
    states
        .iter()
        .zip(free)
        .map(|(s, f)| match f {
            Some(i) => {
                let d = step[*i];
                Pose4::new(s.x + d[0], s.y + d[1], s.z + d[2], s.yaw + d[3])
            }
            None => *s,
        })
        .collect()
}

/// Minimizes the problem's robust cost in place. Fixed variables are never
/// written. On divergence the states are left at their last accepted value.
pub fn solve(p: &mut Problem, opts: &SolverOptions) -> SolveStats {
    let delta = opts.huber_delta;
    let mut free = vec![None; p.states.len()];
    let mut n_free = 0;
    for (v, f) in free.iter_mut().enumerate() {
        if !p.fixed[v] {
            *f = Some(n_free);
            n_free += 1;
        }
    }
    let mut cost = p.cost(&p.states, delta);
    let mut stats = SolveStats {
        iterations: 0,
        accepted: 0,
        initial_cost: cost,
        final_cost: cost,
        termination: Termination::MaxIterations,
    };
    if !cost.is_finite() {
        stats.termination = Termination::Diverged;
        return stats;
    }
    if n_free == 0 {
        stats.termination = Termination::NoVariables;
        return stats;
    }
    let mut lambda = opts.initial_lambda;
    let mut nu = 2.0;
    let mut normal = build_normal(p, &p.states, &free, n_free, delta);
    let order = minimum_degree_order(&normal.h);
    while stats.iterations < opts.max_iterations {
        if cost < 1e-30 {
            stats.termination = Termination::ZeroCost;
            break;
        }
        let gmax = normal.g.iter().map(|v| v.amax()).fold(0.0, f64::max);
        if gmax < opts.gradient_tol {
            stats.termination = Termination::Gradient;
            break;
        }
        stats.iterations += 1;
        let mut damped = normal.h.clone();
        let mut dscale = Vec::with_capacity(n_free);
        for i in 0..n_free {
            let d = damped.diag_mut(i);
            let s = Vector4::from_fn(|k, _| d[(k, k)].clamp(1e-6, 1e32));
            for k in 0..4 {
                d[(k, k)] += lambda * s[k];
            }
            dscale.push(s);
        }
        let step = match BlockCholesky::factor_with_order(&damped, order.clone()) {
            Ok(f) => {
                let rhs: Vec<Vector4<f64>> = normal.g.iter().map(|v| -v).collect();
                Some(f.solve(&rhs))
            }
            Err(_) => None,
        };
        let accepted = step.and_then(|step| {
            let new_states = apply_step(&p.states, &free, &step);
            let new_cost = p.cost(&new_states, delta);
            let predicted: f64 = step
                .iter()
                .zip(&normal.g)
                .zip(&dscale)
                .map(|((d, g), s)| 0.5 * (lambda * d.component_mul(s).dot(d) - g.dot(d)))
                .sum();
            let gain = (cost - new_cost) / predicted;
            (new_cost.is_finite() && new_cost <= cost && predicted > 0.0 && gain > 0.0)
                .then_some((new_states, new_cost, gain, step))
        });
        match accepted {
            Some((new_states, new_cost, gain, step)) => {
                stats.accepted += 1;
                let decrease = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                let step_norm = step.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
                let x_norm = p.states.iter().map(|s| s.translation().norm_squared() + s.yaw * s.yaw).sum::<f64>().sqrt();
                p.states = new_states;
                cost = new_cost;
                lambda *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                if decrease < opts.relative_cost_tol {
                    stats.termination = Termination::CostDecrease;
                    break;
                }
                if step_norm <= opts.step_tol * (x_norm + opts.step_tol) {
                    stats.termination = Termination::StepSize;
                    break;
                }
                normal = build_normal(p, &p.states, &free, n_free, delta);
            }
            None => {
                lambda *= nu;
                nu *= 2.0;
                if lambda > opts.max_lambda {
                    stats.termination = Termination::Stalled;
                    break;
                }
            }
        }
    }
    stats.final_cost = cost;
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose4, relative4};
    use crate::measurements::{make_odometry_edge, DistanceEdge, MapEdge};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth(n: usize) -> Vec<Pose4> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.4;
                Pose4::new(2.0 * a.cos(), 2.0 * a.sin(), 1.0 + 0.1 * i as f64, a + 1.5)
            })
            .collect()
    }

    fn chain_edges(gt: &[Pose4]) -> Vec<MeasurementEdge> {
        let mut edges: Vec<MeasurementEdge> = gt
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                MeasurementEdge::Odometry(make_odometry_edge(0, i as f64, i as f64 + 1.0, &w[0], &w[1], [0.1, 0.1, 0.1, 0.05]))
            })
            .collect();
        let n = gt.len();
        edges.push(MeasurementEdge::Map(MapEdge {
            from: (0, 0.0),
            to: (0, (n - 1) as f64),
            rel: relative4(&gt[0], &gt[n - 1]),
            sigma: [0.05; 4],
            inliers: 50,
        }));
        edges.push(MeasurementEdge::Distance(DistanceEdge {
            i: 0,
            j: 0,
            t: 0.0,
            d: (gt[1].translation() - gt[3].translation()).norm(),
            sigma: 0.1,
        }));
        edges
    }

    fn problem<'a>(states: Vec<Pose4>, edges: &'a [MeasurementEdge]) -> Problem<'a> {
        let n = states.len();
        let mut p = Problem::new(states);
        p.fixed[0] = true;
        for (k, e) in edges.iter().enumerate() {
            let idx = match e {
                MeasurementEdge::Odometry(_) => (k, k + 1),
                MeasurementEdge::Map(_) => (0, n - 1),
                _ => (1, 3),
            };
            p.edges.push((idx.0, idx.1, e));
        }
        p
    }

    #[test]
    fn exact_data_recovers_truth_and_keeps_anchor() {
        let gt = truth(12);
        let edges = chain_edges(&gt);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut init = gt.clone();
        for s in init.iter_mut().skip(1) {
            *s = compose4(s, &Pose4::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.1, rng.random_range(-0.2..0.2)));
        }
        let mut p = problem(init, &edges);
        let anchor = p.states[0];
        let stats = solve(&mut p, &SolverOptions::default());
        assert!(stats.converged(), "{stats:?}");
        assert!(stats.final_cost <= stats.initial_cost);
        assert_eq!(p.states[0].as_array().map(f64::to_bits), anchor.as_array().map(f64::to_bits));
        for (s, t) in p.states.iter().zip(&gt) {
            assert!(s.max_diff(t) < 1e-6, "{s:?} vs {t:?}");
        }
    }

    #[test]
    fn perturbed_optimum_reconverges() {
        let gt = truth(10);
        let mut edges = chain_edges(&gt);
        if let MeasurementEdge::Map(m) = &mut edges[gt.len() - 1] {
            m.rel = compose4(&m.rel, &Pose4::new(0.2, -0.1, 0.05, 0.03));
        }
        let mut p = problem(gt.clone(), &edges);
        solve(&mut p, &SolverOptions::default());
        let optimum = p.states.clone();
        for s in p.states.iter_mut().skip(1) {
            s.x += 0.1;
        }
        let stats = solve(&mut p, &SolverOptions::default());
        assert!(stats.converged());
        for (s, t) in p.states.iter().zip(&optimum) {
            assert!(s.max_diff(t) < 1e-6);
        }
    }

    #[test]
    fn frozen_yaw_is_not_changed() {
        let gt = truth(6);
        let edges = chain_edges(&gt);
        let mut init = gt.clone();
        init[2].yaw += 0.1;
        init[2].x += 0.2;
        let mut p = problem(init.clone(), &edges);
        p.frozen_yaw[2] = true;
        let stats = solve(&mut p, &SolverOptions::default());
        assert!(stats.converged());
        assert_eq!(p.states[2].yaw, init[2].yaw);
        assert!(p.states[2].x != init[2].x);
    }

    #[test]
    fn no_free_variables() {
        let gt = truth(4);
        let edges = chain_edges(&gt);
        let mut p = problem(gt, &edges[..1]);
        p.fixed.iter_mut().for_each(|f| *f = true);
        assert_eq!(solve(&mut p, &SolverOptions::default()).termination, Termination::NoVariables);
    }

    #[test]
    fn cost_never_increases_under_outliers() {
        let gt = truth(15);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let mut edges = chain_edges(&gt);
            for e in edges.iter_mut() {
                if let MeasurementEdge::Odometry(o) = e {
                    o.delta = compose4(&o.delta, &Pose4::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0, rng.random_range(-0.05..0.05)));
                }
                if let MeasurementEdge::Distance(d) = e {
                    d.d += 3.0 * trial as f64;
                }
            }
            let mut p = problem(gt.clone(), &edges);
            let stats = solve(&mut p, &SolverOptions::default());
            assert!(stats.final_cost <= stats.initial_cost);
            assert!(stats.converged());
        }
    }
}
