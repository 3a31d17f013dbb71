//! Simulation of optimally switched trajectories under a synthesized
//! feedback, Monte Carlo evaluation of the discounted cost and estimation of
//! discounted occupation measures.
//!
//! Trajectories use the scheme's step `h`: the control is read from the
//! feedback at the nearest node at the start of each step and the mode is
//! the value of the sampled continuous-time chain at that instant. The
//! state-mode process therefore follows the scheme's kernel except for the
//! nearest-node lookup, so the Monte Carlo cost and the grid value share
//! their time discretisation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::markov::{path_rng, sample_path, ControlRule};
use crate::mather::DiscreteMeasure;
use crate::model::{ControlGrid, GridVectorFunction, Point, TorusGrid};
use crate::solver::{DiscreteScheme, SolverError};

/// Paths per deterministic reduction block.
const BLOCK: usize = 64;

/// Optimal control index per `(mode, node)` with nearest-node lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    grid: TorusGrid,
    controls: ControlGrid,
    modes: usize,
    argmin: Vec<u32>,
}

impl FeedbackPolicy {
    pub fn from_argmin(scheme: &DiscreteScheme, argmin: Vec<u32>) -> Result<Self, SolverError> {
        if argmin.len() != scheme.nodes() * scheme.modes() {
            return Err(SolverError::Input(format!(
                "policy has {} entries, expected {}",
                argmin.len(),
                scheme.nodes() * scheme.modes()
            )));
        }
        if let Some(err) = scheme.boundary_control(&argmin) {
            return Err(err);
        }
        Ok(Self {
            grid: scheme.grid().clone(),
            controls: scheme.controls().clone(),
            modes: scheme.modes(),
            argmin,
        })
    }

    #[inline]
    pub fn control_index(&self, mode: usize, node: usize) -> usize {
        self.argmin[mode * self.grid.len() + node] as usize
    }

    pub fn velocity(&self, mode: usize, node: usize) -> Point {
        self.controls.get(self.control_index(mode, node))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn argmin(&self) -> &[u32] {
        &self.argmin
    }

    /// Largest speed used by the policy.
    pub fn max_speed(&self) -> f64 {
        self.argmin
            .iter()
            .map(|&k| self.controls.norm(k as usize))
            .fold(0.0, f64::max)
    }
}

impl ControlRule for FeedbackPolicy {
    fn control(&self, _t: f64, x: &Point, mode: usize) -> Point {
        self.velocity(mode, self.grid.nearest_node(x))
    }
}

/// Argmin of `T_{λ,c}` at `u`; fails if a minimiser is a boundary control.
pub fn synthesize_feedback(
    scheme: &DiscreteScheme,
    u: &GridVectorFunction,
    lambda: f64,
    c: f64,
) -> Result<FeedbackPolicy, SolverError> {
    let out = scheme.apply_operator(u, lambda, c)?;
    FeedbackPolicy::from_argmin(scheme, out.argmin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec {
    pub start: Point,
    pub mode: usize,
    pub lambda: f64,
    pub c: f64,
    pub paths: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl SimulationSpec {
    fn validate(&self, scheme: &DiscreteScheme) -> Result<(), SolverError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SolverError::Rate(self.lambda));
        }
        if self.mode >= scheme.modes() {
            return Err(SolverError::Input(format!(
                "mode {} out of range",
                self.mode + 1
            )));
        }
        if self.paths == 0 {
            return Err(SolverError::Input("at least one path is required".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SolverError::Input(format!(
                "invalid horizon {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// The default horizon `8/λ`.
    pub fn default_horizon(lambda: f64) -> f64 {
        8.0 / lambda
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// `‖L + c‖_∞ e^{−λT}/λ`.
    pub tail_bound: f64,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
}

/// One trajectory: calls `visit(step, mode, node, control)` at the start
/// of every step and returns the discounted cost.
fn run_path(
    scheme: &DiscreteScheme,
    policy: &FeedbackPolicy,
    spec: &SimulationSpec,
    index: u64,
    mut visit: impl FnMut(usize, usize, usize, usize),
) -> f64 {
    let h = scheme.h();
    let steps = (spec.horizon / h).ceil() as usize;
    let mut rng = path_rng(spec.seed, index);
    let path = sample_path(
        scheme.problem().coupling(),
        spec.mode,
        spec.horizon,
        &mut rng,
    )
    .expect("mode and horizon are validated by the caller");
    let beta = (-spec.lambda * h).exp();
    let grid = scheme.grid();
    let mut x = grid.wrap_point(spec.start);
    let mut disc = 1.0;
    let mut cost = 0.0;
    for k in 0..steps {
        let mode = path.mode_at(k as f64 * h);
        let node = grid.nearest_node(&x);
        let ctrl = policy.control_index(mode, node);
        let v = scheme.controls().get(ctrl);
        visit(k, mode, node, ctrl);
        cost += disc * h * (scheme.problem().hamiltonian(mode).lagrangian(&x, &v) + spec.c);
        x = grid.wrap_point([x[0] - h * v[0], x[1] - h * v[1]]);
        disc *= beta;
    }
    cost
}

/// Deterministic pairwise sum.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

fn tail_bound(scheme: &DiscreteScheme, spec: &SimulationSpec) -> f64 {
    let sup = scheme
        .lagrangian_table()
        .iter()
        .fold(0.0f64, |m, l| m.max((l + spec.c).abs()));
    sup * (-spec.lambda * spec.horizon).exp() / spec.lambda
}

/// Monte Carlo estimate of `E_ℓ Σ_k e^{−λhk} h (L + c)` along the feedback
/// trajectory started at `spec.start`.
pub fn simulate_discounted_cost(
    scheme: &DiscreteScheme,
    policy: &FeedbackPolicy,
    spec: &SimulationSpec,
) -> Result<McEstimate, SolverError> {
    spec.validate(scheme)?;
    let costs: Vec<f64> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|p| run_path(scheme, policy, spec, p, |_, _, _, _| {}))
        .collect();
    let n = costs.len() as f64;
    let mean = pairwise_sum(&costs) / n;
    let sq: Vec<f64> = costs.iter().map(|c| (c - mean) * (c - mean)).collect();
    let var = if costs.len() > 1 {
        pairwise_sum(&sq) / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
        tail_bound: tail_bound(scheme, spec),
        paths: spec.paths,
        steps: (spec.horizon / scheme.h()).ceil() as usize,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationEstimate {
    pub measure: DiscreteMeasure,
    /// Standard error per cell, same layout as the measure.
    pub stderr: Vec<f64>,
    pub start: Point,
    pub mode: usize,
    pub lambda: f64,
    pub paths: usize,
}

/// Monte Carlo estimate of the discounted occupation measure on
/// `(nearest node, control, mode)` cells, normalised to unit mass.
pub fn estimate_occupation(
    scheme: &DiscreteScheme,
    policy: &FeedbackPolicy,
    spec: &SimulationSpec,
) -> Result<OccupationEstimate, SolverError> {
    spec.validate(scheme)?;
    let (n, nk) = (scheme.nodes(), scheme.controls().len());
    let cells = n * scheme.modes() * nk;
    let beta = (-spec.lambda * scheme.h()).exp();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut sum = vec![0.0; cells];
            let mut sumsq = vec![0.0; cells];
            let mut own = vec![0.0; cells];
            let mut touched: Vec<usize> = Vec::new();
            let end = ((b + 1) * BLOCK).min(spec.paths);
            for p in b * BLOCK..end {
                let mut weight = 1.0 - beta;
                run_path(scheme, policy, spec, p as u64, |_, mode, node, ctrl| {
                    let idx = (mode * n + node) * nk + ctrl;
                    if own[idx] == 0.0 {
                        touched.push(idx);
                    }
                    own[idx] += weight;
                    weight *= beta;
                });
                for &idx in &touched {
                    sum[idx] += own[idx];
                    sumsq[idx] += own[idx] * own[idx];
                    own[idx] = 0.0;
                }
                touched.clear();
            }
            (sum, sumsq)
        })
        .collect();
    let mut sum = vec![0.0; cells];
    let mut sumsq = vec![0.0; cells];
    for (s, q) in &blocks {
        for idx in 0..cells {
            sum[idx] += s[idx];
            sumsq[idx] += q[idx];
        }
    }
    let np = spec.paths as f64;
    let total: f64 = pairwise_sum(&sum);
    let stderr: Vec<f64> = (0..cells)
        .map(|idx| {
            let mean = sum[idx] / np;
            let var = if spec.paths > 1 {
                ((sumsq[idx] / np - mean * mean) * np / (np - 1.0)).max(0.0)
            } else {
                0.0
            };
            (var / np).sqrt() * np / total
        })
        .collect();
    let weights = sum.iter().map(|s| s / total).collect();
    let measure = DiscreteMeasure::from_weights(n, scheme.modes(), nk, weights)?;
    Ok(OccupationEstimate {
        measure,
        stderr,
        start: spec.start,
        mode: spec.mode,
        lambda: spec.lambda,
        paths: spec.paths,
    })
}

/// Exact discounted occupation measure of the grid chain started at node
/// `y` in mode `mode`: `(1 − β) Σ_k β^k · law(cell_k)` with `β = e^{−λh}`,
/// where the state moves through the scheme's kernel under `policy`. The
/// series is cut once `β^k < 1e-15` and the result normalised.
pub fn exact_occupation(
    scheme: &DiscreteScheme,
    policy: &FeedbackPolicy,
    y: usize,
    mode: usize,
    lambda: f64,
) -> Result<DiscreteMeasure, SolverError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SolverError::Rate(lambda));
    }
    let (n, m, nk) = (scheme.nodes(), scheme.modes(), scheme.controls().len());
    if y >= n || mode >= m {
        return Err(SolverError::Input(format!(
            "start ({}, {}) out of range",
            y,
            mode + 1
        )));
    }
    let beta = (-lambda * scheme.h()).exp();
    let mut mu = DiscreteMeasure::zeros(n, m, nk);
    let mut dist = vec![0.0; n * m];
    let mut next = vec![0.0; n * m];
    dist[mode * n + y] = 1.0;
    let mut weight = 1.0 - beta;
    let mut decay = 1.0;
    while decay >= 1e-15 {
        for (ix, &q) in dist.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let (i, x) = (ix / n, ix % n);
            let k = policy.control_index(i, x);
            let cell = mu.index(i, x, k);
            mu.weights_mut()[cell] += weight * q;
            for j in 0..m {
                let p = scheme.transition(i, j) * q;
                if p == 0.0 {
                    continue;
                }
                for (s, a) in scheme.stencil(x, k).iter() {
                    next[j * n + s] += p * a;
                }
            }
        }
        std::mem::swap(&mut dist, &mut next);
        next.iter_mut().for_each(|v| *v = 0.0);
        weight *= beta;
        decay *= beta;
    }
    mu.normalize();
    Ok(mu)
}

/// Mass within Euclidean distance `radius` of `(x*, v*)` in position-velocity
/// space, with the torus metric on positions.
pub fn mass_near(
    scheme: &DiscreteScheme,
    mu: &DiscreteMeasure,
    target: Point,
    velocity: Point,
    radius: f64,
) -> f64 {
    let dim = scheme.grid().dim();
    mu.weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .filter(|(idx, _)| {
            let (_, x, k) = mu.cell(*idx);
            let dx = scheme.grid().distance(&scheme.grid().node(x), &target);
            let v = scheme.controls().get(k);
            let dv2: f64 = (0..dim).map(|a| (v[a] - velocity[a]).powi(2)).sum();
            (dx * dx + dv2).sqrt() <= radius + 1e-12
        })
        .map(|(_, w)| *w)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: String,
    pub seed: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub tail_bound: f64,
    pub grid_value: f64,
    pub paths: usize,
}
