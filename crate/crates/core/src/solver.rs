//! Monotone semi-Lagrangian scheme for the discounted system
//!
//! ```text
//! (T_{λ,c} w)_i(x) = min_k  h(L_i(x, v_k) + c) + e^{−λh} Σ_j (P_h)_ij Interp[w_j](x − h v_k)
//! ```
//!
//! with `P_h = e^{−hB}`. The operator is monotone and an `e^{−λh}`
//! contraction, so value iteration converges to the unique fixed point
//! `u^{λ,c}`. Constants shift exactly: `u^{λ,c} = u^{λ,0} + (c/λ′)𝟙` where
//! `λ′ = (1 − e^{−λh})/h`.

use std::io::Write;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::markov::{transition_matrix, MarkovError};
use crate::model::{ControlGrid, GridVectorFunction, ModelError, ProblemSpec, Stencil, TorusGrid};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error("time step must be positive and finite, got {0}")]
    Step(f64),
    #[error("discount rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error("value iteration stalled at residual {residual:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("optimal control {control} at node {node}, mode {mode} lies on the control-set boundary; increase v_max")]
    BoundaryControl {
        mode: usize,
        node: usize,
        control: usize,
    },
    #[error("grid function has shape {found:?}, scheme expects {expected:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{0}")]
    Input(String),
}

/// Problem plus its discretisation tables.
#[derive(Debug, Clone)]
pub struct DiscreteScheme {
    problem: ProblemSpec,
    grid: TorusGrid,
    controls: ControlGrid,
    h: f64,
    /// `e^{−hB}`, row-major.
    ph: Vec<f64>,
    /// `L_i(x, v_k)` at `(i·N + x)·K + k`.
    lagrangian: Vec<f64>,
    /// Stencil of `x − h v_k` at `x·K + k`.
    stencils: Vec<Stencil>,
}

pub fn build_scheme(
    problem: ProblemSpec,
    grid: TorusGrid,
    controls: ControlGrid,
    h: f64,
) -> Result<DiscreteScheme, SolverError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SolverError::Step(h));
    }
    if grid.dim() != problem.dim() || controls.dim() != problem.dim() {
        return Err(ModelError::Mismatch(format!(
            "problem dimension {}, grid dimension {}, control dimension {}",
            problem.dim(),
            grid.dim(),
            controls.dim()
        ))
        .into());
    }
    if controls.v_max() * h >= 0.5 {
        return Err(SolverError::Input(format!(
            "v_max·h = {} moves more than half the torus per step",
            controls.v_max() * h
        )));
    }
    let b = problem.coupling();
    if h * b.max_diagonal() >= 1.0 {
        warn!(
            "h·max b_ii = {} ≥ 1: modes switch more than once per step on average",
            h * b.max_diagonal()
        );
    }
    let pm = transition_matrix(b, h)?;
    let m = problem.modes();
    let ph: Vec<f64> = (0..m * m).map(|e| pm.get(e / m, e % m)).collect();
    let (n_nodes, n_ctrl) = (grid.len(), controls.len());
    let mut stencils = Vec::with_capacity(n_nodes * n_ctrl);
    for x in 0..n_nodes {
        for k in 0..n_ctrl {
            let v = controls.get(k);
            stencils.push(grid.stencil_from_node(x, &[-h * v[0], -h * v[1]]));
        }
    }
    let mut lagrangian = vec![0.0; m * n_nodes * n_ctrl];
    lagrangian
        .par_chunks_mut(n_ctrl)
        .enumerate()
        .for_each(|(ix, row)| {
            let (i, x) = (ix / n_nodes, ix % n_nodes);
            let ham = problem.hamiltonian(i);
            let p = grid.node(x);
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = ham.lagrangian(&p, &controls.get(k));
            }
        });
    if let Some(bad) = lagrangian.iter().find(|v| !v.is_finite()) {
        return Err(SolverError::Input(format!(
            "non-finite Lagrangian value {bad}"
        )));
    }
    Ok(DiscreteScheme {
        problem,
        grid,
        controls,
        h,
        ph,
        lagrangian,
        stencils,
    })
}

/// Output of one operator application.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorOutput {
    pub value: GridVectorFunction,
    /// Minimising control index at `i·N + x`.
    pub argmin: Vec<u32>,
}

impl DiscreteScheme {
    /// Scheme with `h = Δx` and the default control radius for level `c`.
    pub fn with_defaults(
        problem: ProblemSpec,
        n: usize,
        controls_per_axis: usize,
        c: f64,
    ) -> Result<Self, SolverError> {
        let grid = TorusGrid::new(problem.dim(), n)?;
        let v_max = problem.default_v_max(c);
        let controls = ControlGrid::uniform(problem.dim(), controls_per_axis, v_max)?;
        let h = grid.spacing();
        build_scheme(problem, grid, controls, h)
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn controls(&self) -> &ControlGrid {
        &self.controls
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn modes(&self) -> usize {
        self.problem.modes()
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    /// `(P_h)_ij`.
    #[inline]
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.ph[i * self.modes() + j]
    }

    #[inline]
    pub fn lagrangian(&self, mode: usize, node: usize, control: usize) -> f64 {
        self.lagrangian[(mode * self.nodes() + node) * self.controls.len() + control]
    }

    pub fn lagrangian_table(&self) -> &[f64] {
        &self.lagrangian
    }

    #[inline]
    pub fn stencil(&self, node: usize, control: usize) -> &Stencil {
        &self.stencils[node * self.controls.len() + control]
    }

    /// `λ′ = (1 − e^{−λh})/h`.
    pub fn effective_rate(&self, lambda: f64) -> f64 {
        -(-lambda * self.h).exp_m1() / self.h
    }

    fn check_shape(&self, w: &GridVectorFunction) -> Result<(), SolverError> {
        if w.nodes() != self.nodes() || w.modes() != self.modes() {
            return Err(SolverError::Shape {
                expected: (self.nodes(), self.modes()),
                found: (w.nodes(), w.modes()),
            });
        }
        Ok(())
    }

    /// `z_i = Σ_j (P_h)_ij w_j`.
    fn mix(&self, w: &[f64]) -> Vec<f64> {
        let (m, n) = (self.modes(), self.nodes());
        if m == 1 {
            return w.to_vec();
        }
        let mut z = vec![0.0; m * n];
        for i in 0..m {
            let zi = &mut z[i * n..(i + 1) * n];
            for j in 0..m {
                let p = self.transition(i, j);
                if p == 0.0 {
                    continue;
                }
                for (dst, src) in zi.iter_mut().zip(&w[j * n..(j + 1) * n]) {
                    *dst += p * src;
                }
            }
        }
        z
    }

    /// `(K w)_i(x, v_k) = Σ_j (P_h)_ij Interp[w_j](x − h v_k)` for all cells.
    pub fn kernel(&self, w: &GridVectorFunction) -> Result<Vec<f64>, SolverError> {
        self.check_shape(w)?;
        let z = self.mix(w.values());
        let (n, nk) = (self.nodes(), self.controls.len());
        let mut out = vec![0.0; self.modes() * n * nk];
        out.par_chunks_mut(nk).enumerate().for_each(|(ix, row)| {
            let (i, x) = (ix / n, ix % n);
            let zi = &z[i * n..(i + 1) * n];
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = apply_stencil(self.stencil(x, k), zi);
            }
        });
        Ok(out)
    }

    /// Core sweep with discount factor `beta` and additive constant `hc`.
    fn sweep(&self, w: &[f64], beta: f64, hc: f64, out: &mut [f64], argmin: &mut [u32]) {
        let z = self.mix(w);
        let (n, nk) = (self.nodes(), self.controls.len());
        let h = self.h;
        out.par_iter_mut()
            .zip(argmin.par_iter_mut())
            .enumerate()
            .with_min_len(64)
            .for_each(|(ix, (slot, arg))| {
                let (i, x) = (ix / n, ix % n);
                let zi = &z[i * n..(i + 1) * n];
                let lag = &self.lagrangian[ix * nk..(ix + 1) * nk];
                let st = &self.stencils[x * nk..(x + 1) * nk];
                let mut best = f64::INFINITY;
                let mut best_k = 0u32;
                for k in 0..nk {
                    let val = h * lag[k] + hc + beta * apply_stencil(&st[k], zi);
                    if val < best {
                        best = val;
                        best_k = k as u32;
                    }
                }
                *slot = best;
                *arg = best_k;
            });
    }

    /// One application of `T_{λ,c}`; `λ = 0` gives the critical operator.
    pub fn apply_operator(
        &self,
        w: &GridVectorFunction,
        lambda: f64,
        c: f64,
    ) -> Result<OperatorOutput, SolverError> {
        self.check_shape(w)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(SolverError::Rate(lambda));
        }
        let beta = (-lambda * self.h).exp();
        let mut out = vec![0.0; w.values().len()];
        let mut argmin = vec![0u32; out.len()];
        self.sweep(w.values(), beta, self.h * c, &mut out, &mut argmin);
        Ok(OperatorOutput {
            value: GridVectorFunction::from_values(self.nodes(), self.modes(), out)?,
            argmin,
        })
    }

    /// First argmin that sits on the control-set boundary, if any.
    pub fn boundary_control(&self, argmin: &[u32]) -> Option<SolverError> {
        let n = self.nodes();
        argmin.iter().enumerate().find_map(|(ix, &k)| {
            self.controls
                .on_boundary(k as usize)
                .then_some(SolverError::BoundaryControl {
                    mode: ix / n,
                    node: ix % n,
                    control: k as usize,
                })
        })
    }

    /// `T_{0,c} w − w`: nonnegative exactly for discrete critical
    /// subsolutions at level `c`, zero where the inequality is tight.
    pub fn critical_defect(
        &self,
        w: &GridVectorFunction,
        c: f64,
    ) -> Result<GridVectorFunction, SolverError> {
        let t = self.apply_operator(w, 0.0, c)?;
        let vals = t
            .value
            .values()
            .iter()
            .zip(w.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(GridVectorFunction::from_values(
            self.nodes(),
            self.modes(),
            vals,
        )?)
    }
}

#[inline]
fn apply_stencil(st: &Stencil, values: &[f64]) -> f64 {
    let mut s = 0.0;
    for q in 0..st.len {
        s += st.weights[q] * values[st.nodes[q] as usize];
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Bound on the distance to the fixed point at exit.
    pub tol: f64,
    pub max_iter: usize,
    /// Fail when an optimal control lies on the boundary of the control set.
    pub check_boundary: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 5_000_000,
            check_boundary: true,
        }
    }
}

/// Fixed point of `T_{λ,c}` with its convergence history.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedSolution {
    pub lambda: f64,
    pub c: f64,
    pub u: GridVectorFunction,
    /// Minimising control index per `i·N + x` at the fixed point.
    pub policy: Vec<u32>,
    pub iterations: usize,
    pub residual: f64,
    /// `(iteration, residual)`, thinned to the first 100 iterations,
    /// every 100th after that, and the last one.
    pub log: Vec<(usize, f64)>,
}

impl DiscountedSolution {
    pub fn write_log_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,residual")?;
        for (k, r) in &self.log {
            writeln!(out, "{k},{r:.16e}")?;
        }
        Ok(())
    }
}

/// Writes `x[,y],mode,value` rows for every node and mode.
pub fn write_grid_function_csv<W: Write>(
    grid: &TorusGrid,
    u: &GridVectorFunction,
    mut out: W,
) -> std::io::Result<()> {
    if grid.dim() == 1 {
        writeln!(out, "x,mode,value")?;
    } else {
        writeln!(out, "x,y,mode,value")?;
    }
    for i in 0..u.modes() {
        for node in 0..u.nodes() {
            let p = grid.node(node);
            if grid.dim() == 1 {
                writeln!(out, "{:.16e},{},{:.16e}", p[0], i + 1, u.get(i, node))?;
            } else {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{},{:.16e}",
                    p[0],
                    p[1],
                    i + 1,
                    u.get(i, node)
                )?;
            }
        }
    }
    Ok(())
}

/// Value iteration for `u^{λ,c}`, optionally warm-started.
///
/// With `d = T w − w`, the fixed point lies in `T w + β/(1−β)·[min d, max d]`.
/// Iteration stops once half that bracket is below `tol` and returns its
/// midpoint, so both `‖T w − w‖_∞` and the distance to the fixed point are
/// at most `tol`. Runs at different `c` differ in `d` by a constant only, so
/// they stop together and differ by exactly `(c − c′)/λ′`.
pub fn solve_discounted_with(
    scheme: &DiscreteScheme,
    lambda: f64,
    c: f64,
    opts: &SolveOptions,
    start: Option<&GridVectorFunction>,
) -> Result<DiscountedSolution, SolverError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SolverError::Rate(lambda));
    }
    let (n, m) = (scheme.nodes(), scheme.modes());
    let mut w = match start {
        Some(s) => {
            scheme.check_shape(s)?;
            s.values().to_vec()
        }
        None => vec![0.0; n * m],
    };
    let beta = (-lambda * scheme.h).exp();
    let hc = scheme.h * c;
    let mut next = vec![0.0; n * m];
    let mut argmin = vec![0u32; n * m];
    let mut log = Vec::new();
    let mut iterations = 0;
    // d = T w − w brackets the fixed point: u ∈ T w + β/(1−β)·[min d, max d]
    let gain = beta / (1.0 - beta);
    let bound = loop {
        scheme.sweep(&w, beta, hc, &mut next, &mut argmin);
        iterations += 1;
        let (lo, hi) = next
            .iter()
            .zip(&w)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a - b), hi.max(a - b))
            });
        let res = lo.abs().max(hi.abs());
        let bound = gain * 0.5 * (hi - lo);
        std::mem::swap(&mut w, &mut next);
        if iterations <= 100 || iterations % 100 == 0 {
            log.push((iterations, res));
        }
        if !res.is_finite() {
            return Err(SolverError::NonConvergence {
                iterations,
                residual: res,
            });
        }
        if bound <= opts.tol {
            let shift = gain * 0.5 * (hi + lo);
            w.iter_mut().for_each(|v| *v += shift);
            break bound;
        }
        if iterations >= opts.max_iter {
            return Err(SolverError::NonConvergence {
                iterations,
                residual: res,
            });
        }
    };
    // residual and policy of the returned iterate
    scheme.sweep(&w, beta, hc, &mut next, &mut argmin);
    let residual = next
        .iter()
        .zip(&w)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    if log.last().map(|e| e.0) != Some(iterations) {
        log.push((iterations, residual));
    }
    debug!("value iteration λ={lambda} c={c}: {iterations} iterations, residual {residual:e}, error bound {bound:e}");
    if opts.check_boundary {
        if let Some(err) = scheme.boundary_control(&argmin) {
            return Err(err);
        }
    }
    Ok(DiscountedSolution {
        lambda,
        c,
        u: GridVectorFunction::from_values(n, m, w)?,
        policy: argmin,
        iterations,
        residual,
        log,
    })
}

pub fn solve_discounted(
    scheme: &DiscreteScheme,
    lambda: f64,
    c: f64,
    tol: f64,
) -> Result<GridVectorFunction, SolverError> {
    let opts = SolveOptions {
        tol,
        ..SolveOptions::default()
    };
    Ok(solve_discounted_with(scheme, lambda, c, &opts, None)?.u)
}

/// `‖u^{λ,c} − u^{λ,c'} − ((c − c')/λ′)𝟙‖_∞`.
pub fn shift_identity_check(
    scheme: &DiscreteScheme,
    lambda: f64,
    c: f64,
    c_prime: f64,
    tol: f64,
) -> Result<f64, SolverError> {
    let u = solve_discounted(scheme, lambda, c, tol)?;
    let v = solve_discounted(scheme, lambda, c_prime, tol)?;
    let shift = (c - c_prime) / scheme.effective_rate(lambda);
    Ok(u.values()
        .iter()
        .zip(v.values())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b - shift).abs())))
}

/// `u^{λ,c} − (min_{i,x} u^{λ,c}) 𝟙`.
pub fn normalized_limit(
    scheme: &DiscreteScheme,
    lambda: f64,
    c: f64,
    tol: f64,
) -> Result<GridVectorFunction, SolverError> {
    let u = solve_discounted(scheme, lambda, c, tol)?;
    Ok(normalize(&u))
}

pub fn normalize(u: &GridVectorFunction) -> GridVectorFunction {
    let lo = u.min();
    u.map(|v| v - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    /// Extrapolated `c_h`.
    pub value: f64,
    /// `spread + extrapolation_residual`.
    pub error: f64,
    /// `λ′·osc(u^{λ,0})` at the smallest rate.
    pub spread: f64,
    pub extrapolation_residual: f64,
    pub lambdas: Vec<f64>,
    /// `−λ′ · mean(u^{λ,0})` per rate.
    pub raw: Vec<f64>,
    #[serde(skip)]
    pub solutions: Vec<DiscountedSolution>,
}

/// Vanishing-discount estimate of the discrete critical value.
///
/// The sequence `r(λ) = −λ′ · mean(u^{λ,0})` is extrapolated to `λ′ = 0`
/// with Neville's scheme. Each solve is warm-started from the previous one.
pub fn estimate_critical_value(
    scheme: &DiscreteScheme,
    lambdas: &[f64],
    opts: &SolveOptions,
) -> Result<CriticalEstimate, SolverError> {
    if lambdas.len() < 2 {
        return Err(SolverError::Input(
            "at least two discount rates are required".into(),
        ));
    }
    if lambdas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(SolverError::Input(
            "discount rates must be strictly decreasing".into(),
        ));
    }
    let mut solutions: Vec<DiscountedSolution> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = solutions.last().map(|prev: &DiscountedSolution| {
            // λ′u is the slowly varying quantity across rates
            prev.u
                .scale(scheme.effective_rate(prev.lambda) / scheme.effective_rate(lambda))
        });
        solutions.push(solve_discounted_with(
            scheme,
            lambda,
            0.0,
            opts,
            warm.as_ref(),
        )?);
    }
    let xs: Vec<f64> = lambdas.iter().map(|&l| scheme.effective_rate(l)).collect();
    let raw: Vec<f64> = solutions
        .iter()
        .zip(&xs)
        .map(|(s, x)| -x * s.u.mean())
        .collect();
    let value = neville_at_zero(&xs, &raw);
    let lower = neville_at_zero(&xs[1..], &raw[1..]);
    let extrapolation_residual = (value - lower).abs();
    let last = solutions.last().expect("nonempty");
    let spread = xs[xs.len() - 1] * (last.u.max() - last.u.min());
    Ok(CriticalEstimate {
        value,
        error: spread + extrapolation_residual,
        spread,
        extrapolation_residual,
        lambdas: lambdas.to_vec(),
        raw,
        solutions,
    })
}

/// Value at 0 of the interpolating polynomial through `(xs, ys)`.
pub fn neville_at_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let k = xs.len();
    for level in 1..k {
        for i in 0..k - level {
            let (xi, xj) = (xs[i], xs[i + level]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    p[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingMatrix, HamiltonianSpec, ScalarField};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(potential: &str, n: usize, k: usize) -> DiscreteScheme {
        let p = ProblemSpec::scalar_quadratic(1, potential).unwrap();
        DiscreteScheme::with_defaults(p, n, k, 0.0).unwrap()
    }

    fn two_mode(fa: &str, fb: &str, rate: f64, n: usize, k: usize) -> DiscreteScheme {
        let ha = HamiltonianSpec::quadratic(1, ScalarField::parse(fa).unwrap()).unwrap();
        let hb = HamiltonianSpec::quadratic(1, ScalarField::parse(fb).unwrap()).unwrap();
        let b = CouplingMatrix::symmetric_pair(rate).unwrap();
        let p = ProblemSpec::new(vec![ha, hb], b).unwrap();
        DiscreteScheme::with_defaults(p, n, k, 0.0).unwrap()
    }

    fn random_function(rng: &mut ChaCha8Rng, s: &DiscreteScheme, amp: f64) -> GridVectorFunction {
        GridVectorFunction::from_fn(s.nodes(), s.modes(), |_, _| rng.random_range(-amp..amp))
    }

    #[test]
    fn stencils_are_convex_combinations() {
        let s = two_mode("1 - cos(2*pi*x)", "0.5", 1.0, 16, 9);
        for x in 0..s.nodes() {
            for k in 0..s.controls().len() {
                let st = s.stencil(x, k);
                let total: f64 = st.iter().map(|(_, w)| w).sum();
                assert!((total - 1.0).abs() < 1e-14);
                assert!(st.iter().all(|(_, w)| (0.0..=1.0).contains(&w)));
            }
        }
        for i in 0..2 {
            let row: f64 = (0..2).map(|j| s.transition(i, j)).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_with_flat_potential() {
        let s = scalar("0", 16, 9);
        let (lambda, a) = (0.3, 2.5);
        let w = GridVectorFunction::constant(16, 1, a);
        let out = s.apply_operator(&w, lambda, 0.0).unwrap();
        let expect = (-lambda * s.h()).exp() * a;
        assert!(out.value.values().iter().all(|&v| v == expect));
        assert!(out
            .argmin
            .iter()
            .all(|&k| k as usize == s.controls().zero_index()));
    }

    #[test]
    fn zero_lagrangian_at_zero_rate_adds_hc() {
        let s = scalar("0", 16, 9);
        let out = s
            .apply_operator(&GridVectorFunction::zeros(16, 1), 0.0, 0.7)
            .unwrap();
        assert!(out
            .value
            .values()
            .iter()
            .all(|&v| (v - s.h() * 0.7).abs() < 1e-15));
    }

    #[test]
    fn flat_potential_solutions() {
        let s = scalar("0", 32, 9);
        let u = solve_discounted(&s, 0.5, 0.0, 1e-9).unwrap();
        assert!(u.sup_norm() <= 1e-9);
        // geometric series h·c·Σ e^{−λhk} = c/λ′
        let h = 1e-3;
        let p = ProblemSpec::scalar_quadratic(1, "0").unwrap();
        let grid = TorusGrid::new(1, 16).unwrap();
        let ctrl = ControlGrid::uniform(1, 9, p.default_v_max(1.0)).unwrap();
        let s = build_scheme(p, grid, ctrl, h).unwrap();
        let lambda = 0.5;
        let u = solve_discounted(&s, lambda, 1.0, 1e-9).unwrap();
        let exact = 1.0 / s.effective_rate(lambda);
        assert!(u.values().iter().all(|v| (v - exact).abs() < 1e-5));
        assert!(u
            .values()
            .iter()
            .all(|v| (v - 1.0 / lambda).abs() <= lambda * h / lambda));
    }

    #[test]
    fn identical_modes_match_scalar() {
        let f = "1 - cos(2*pi*x)";
        let s1 = scalar(f, 32, 17);
        let s2 = two_mode(f, f, 1.0, 32, 17);
        let u1 = solve_discounted(&s1, 0.4, 0.0, 1e-10).unwrap();
        let u2 = solve_discounted(&s2, 0.4, 0.0, 1e-10).unwrap();
        for i in 0..2 {
            for x in 0..32 {
                assert!((u2.get(i, x) - u1.get(0, x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shift_identity_is_exact() {
        let s = scalar("0", 16, 9);
        assert!(shift_identity_check(&s, 0.5, 0.0, 1.0, 1e-10).unwrap() <= 2e-10);
        let s = two_mode("1 - cos(2*pi*x)", "0.3 + 0.2*sin(2*pi*x)", 0.8, 16, 17);
        let tol = 1e-10;
        assert!(shift_identity_check(&s, 0.5, 0.0, 0.3, tol).unwrap() <= 2.0 * tol);
        assert!(shift_identity_check(&s, 0.05, 0.0, 1.0, tol).unwrap() <= 2.0 * tol);
        assert!(shift_identity_check(&s, 0.5, 0.2, 0.2, tol).unwrap() == 0.0);
    }

    #[test]
    fn exit_iterate_is_within_tol_of_fixed_point() {
        let s = two_mode("1 - cos(2*pi*x)", "0.3 + 0.2*sin(2*pi*x)", 0.8, 16, 17);
        let loose = solve_discounted(&s, 0.2, 0.0, 1e-6).unwrap();
        let tight = solve_discounted(&s, 0.2, 0.0, 1e-12).unwrap();
        assert!(loose.sup_distance(&tight) <= 1e-6 + 1e-12);
    }

    #[test]
    fn normalized_limit_has_zero_minimum() {
        let s = two_mode("1 - cos(2*pi*x)", "0.5", 1.0, 16, 17);
        let a = normalized_limit(&s, 0.4, 0.0, 1e-11).unwrap();
        let b = normalized_limit(&s, 0.4, 1.0, 1e-11).unwrap();
        assert_eq!(a.min(), 0.0);
        assert!(a.sup_distance(&b) < 1e-7);
    }

    #[test]
    fn neville_recovers_polynomials() {
        let xs = [0.4, 0.2, 0.1];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x + 0.5 * x * x).collect();
        assert!((neville_at_zero(&xs, &ys) - 1.5).abs() < 1e-13);
    }

    #[test]
    fn critical_value_shifts_with_potential() {
        let a = estimate_critical_value(
            &scalar("1 - cos(2*pi*x)", 32, 17),
            &[0.4, 0.2],
            &SolveOptions::default(),
        )
        .unwrap();
        let b = estimate_critical_value(
            &scalar("1.25 - cos(2*pi*x)", 32, 17),
            &[0.4, 0.2],
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(
            (a.value - b.value - 0.25).abs() < 1e-6,
            "{} {}",
            a.value,
            b.value
        );
        assert!(a.value.abs() < 2e-2);
    }

    #[test]
    fn boundary_controls_are_rejected() {
        let p = ProblemSpec::scalar_quadratic(1, "4 - 4*cos(2*pi*x)").unwrap();
        let grid = TorusGrid::new(1, 32).unwrap();
        let ctrl = ControlGrid::uniform(1, 5, 0.5).unwrap();
        let s = build_scheme(p, grid, ctrl, 1.0 / 32.0).unwrap();
        assert!(matches!(
            solve_discounted(&s, 0.5, 0.0, 1e-9),
            Err(SolverError::BoundaryControl { .. })
        ));
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let s = scalar("1 - cos(2*pi*x)", 16, 9);
        let opts = SolveOptions {
            max_iter: 5,
            ..SolveOptions::default()
        };
        assert!(matches!(
            solve_discounted_with(&s, 0.1, 0.0, &opts, None),
            Err(SolverError::NonConvergence { iterations: 5, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn monotone_contractive_and_constant_compatible(seed in any::<u64>(), lambda in 0.01f64..2.0, c in -1.0f64..1.0, a in -5.0f64..5.0) {
            let s = two_mode("1 - cos(2*pi*x)", "0.4 + 0.3*sin(2*pi*x)", 1.3, 16, 9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_function(&mut rng, &s, 3.0);
            let bump = random_function(&mut rng, &s, 1.0).map(f64::abs);
            let w2 = GridVectorFunction::from_values(16, 2, w.values().iter().zip(bump.values()).map(|(x, y)| x + y).collect()).unwrap();
            let tw = s.apply_operator(&w, lambda, c).unwrap().value;
            let tw2 = s.apply_operator(&w2, lambda, c).unwrap().value;
            prop_assert!(tw.values().iter().zip(tw2.values()).all(|(x, y)| x <= y));
            let beta = (-lambda * s.h()).exp();
            prop_assert!(tw.sup_distance(&tw2) <= beta * w.sup_distance(&w2) + 1e-12);
            let shifted = s.apply_operator(&w.add_constant(a), lambda, c).unwrap().value;
            let expect = tw.add_constant(beta * a);
            prop_assert!(shifted.sup_distance(&expect) <= 1e-12 * (1.0 + a.abs() + w.sup_norm()));
        }
    }
}
