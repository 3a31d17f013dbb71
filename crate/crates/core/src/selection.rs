//! The selected critical solution `u⁰` and the vanishing-discount study.
//!
//! `u⁰_ℓ(y)` is the largest value at `(y, ℓ)` over discrete critical
//! subsolutions `w` (`w ≤ hL + K w + h c_h` on every cell) whose averages
//! against the supplied Mather measures are nonpositive. Each value is the
//! optimum of its own linear program, solved here in dual form
//!
//! ```text
//! min Σ ρ h(L + c_h)   s.t.   Σ ρ (e_{x,i} − K-column) + Σ θ_q μ̄_q = e_{y,ℓ},   ρ, θ ≥ 0
//! ```
//!
//! Only the right-hand side changes between points, so consecutive points
//! are re-solved by the dual simplex from the previous optimal basis.

use std::io::Write;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mather::{
    build_lp, closedness_residual, extreme_mather_measures, solve_lp, stationarity_column,
    DiscreteMeasure, FaceOptions, MatherError, MatherLp, MatherSolution,
};
use crate::model::GridVectorFunction;
use crate::montecarlo::{exact_occupation, synthesize_feedback};
use crate::simplex::{self, Basis, LpError, SimplexOptions, SparseColumns, StandardLp};
use crate::solver::{
    solve_discounted_with, DiscountedSolution, DiscreteScheme, SolveOptions, SolverError,
};

/// Points solved in sequence with warm starts; blocks run in parallel.
const BLOCK: usize = 32;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error(transparent)]
    Mather(#[from] MatherError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("measure {index} is not admissible: {reason}")]
    Measure { index: usize, reason: String },
    #[error("no Mather measures supplied")]
    NoMeasures,
    #[error("selection program at node {node}, mode {mode} is infeasible; the critical value is inconsistent")]
    Infeasible { node: usize, mode: usize },
    #[error("selection program at node {node}, mode {mode} failed: {source}")]
    Lp {
        node: usize,
        mode: usize,
        source: LpError,
    },
    #[error("w is not a critical subsolution: defect {0:e}")]
    NotSubsolution(f64),
    #[error("{0}")]
    Input(String),
}

/// Scheme, critical value and the Mather measures constraining `ℱ`.
#[derive(Debug, Clone)]
pub struct SelectionProblem<'a> {
    scheme: &'a DiscreteScheme,
    c_h: f64,
    measures: Vec<DiscreteMeasure>,
}

impl<'a> SelectionProblem<'a> {
    /// Checks that each measure is closed within `1e-8` and optimal within
    /// `face_tol` of `−c_h`.
    pub fn new(
        scheme: &'a DiscreteScheme,
        c_h: f64,
        measures: Vec<DiscreteMeasure>,
        face_tol: f64,
    ) -> Result<Self, SelectionError> {
        if measures.is_empty() {
            return Err(SelectionError::NoMeasures);
        }
        for (index, mu) in measures.iter().enumerate() {
            let r = closedness_residual(scheme, mu)?;
            if r > 1e-8 {
                return Err(SelectionError::Measure {
                    index,
                    reason: format!("closedness residual {r:e}"),
                });
            }
            let excess = mu.action(scheme) + c_h;
            if excess > face_tol + 1e-10 {
                return Err(SelectionError::Measure {
                    index,
                    reason: format!("action exceeds the optimum by {excess:e}"),
                });
            }
        }
        Ok(Self {
            scheme,
            c_h,
            measures,
        })
    }

    pub fn scheme(&self) -> &DiscreteScheme {
        self.scheme
    }

    pub fn critical_value(&self) -> f64 {
        self.c_h
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    /// Dual-form program with the right-hand side at `target = ℓ·N + y`.
    fn program(&self, target: usize) -> StandardLp {
        let s = self.scheme;
        let (n, m, nk) = (s.nodes(), s.modes(), s.controls().len());
        let h = s.h();
        let mut matrix = SparseColumns::new(n * m);
        let mut cost = Vec::with_capacity(n * m * nk + self.measures.len());
        let mut col = Vec::new();
        for i in 0..m {
            for x in 0..n {
                for k in 0..nk {
                    stationarity_column(s, i, x, k, &mut col);
                    col.iter_mut().for_each(|e| e.1 = -e.1);
                    matrix.push_column(&col);
                    cost.push(h * (s.lagrangian(i, x, k) + self.c_h));
                }
            }
        }
        for mu in &self.measures {
            let marg = mu.state_marginal();
            let entries: Vec<(usize, f64)> = marg
                .values()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(r, v)| (r, *v))
                .collect();
            matrix.push_column(&entries);
            cost.push(0.0);
        }
        let mut rhs = vec![0.0; n * m];
        rhs[target] = 1.0;
        StandardLp { matrix, cost, rhs }
    }
}

/// `u⁰` on the requested points (`ℓ·N + y` indices).
#[derive(Debug, Clone, PartialEq)]
pub struct PointValues {
    pub points: Vec<usize>,
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Solves the selection program at each point in `points`.
pub fn compute_u0_at(
    sel: &SelectionProblem,
    points: &[usize],
) -> Result<PointValues, SelectionError> {
    let total = sel.scheme.nodes() * sel.scheme.modes();
    if let Some(bad) = points.iter().find(|&&p| p >= total) {
        return Err(SelectionError::Input(format!(
            "point index {bad} out of range"
        )));
    }
    let base = sel.program(points.first().copied().unwrap_or(0));
    let opts = SimplexOptions::default();
    let n = sel.scheme.nodes();
    let blocks: Vec<Result<(Vec<f64>, usize), SelectionError>> = points
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut lp = base.clone();
            let mut basis: Option<Basis> = None;
            let mut values = Vec::with_capacity(chunk.len());
            let mut iterations = 0;
            for &target in chunk {
                lp.rhs.iter_mut().for_each(|v| *v = 0.0);
                lp.rhs[target] = 1.0;
                let attempt = match &basis {
                    Some(b) => simplex::resolve_rhs(&lp, b, &opts),
                    None => simplex::solve(&lp, &opts),
                };
                let sol = attempt.map_err(|e| match e {
                    LpError::Infeasible(_) | LpError::Unbounded => SelectionError::Infeasible {
                        node: target % n,
                        mode: target / n,
                    },
                    other => SelectionError::Lp {
                        node: target % n,
                        mode: target / n,
                        source: other,
                    },
                })?;
                iterations += sol.iterations;
                values.push(sol.objective);
                basis = Some(sol.basis);
            }
            Ok((values, iterations))
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut iterations = 0;
    for b in blocks {
        let (v, it) = b?;
        values.extend(v);
        iterations += it;
    }
    debug!(
        "selection programs: {} points, {iterations} simplex iterations",
        points.len()
    );
    Ok(PointValues {
        points: points.to_vec(),
        values,
        iterations,
    })
}

/// `u⁰` on every node and mode.
pub fn compute_u0(sel: &SelectionProblem) -> Result<GridVectorFunction, SelectionError> {
    let total = sel.scheme.nodes() * sel.scheme.modes();
    let points: Vec<usize> = (0..total).collect();
    let vals = compute_u0_at(sel, &points)?;
    Ok(
        GridVectorFunction::from_values(sel.scheme.nodes(), sel.scheme.modes(), vals.values)
            .map_err(MatherError::from)?,
    )
}

/// Everything the selection stage produces for one scheme.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub lp: MatherSolution,
    pub measures: Vec<DiscreteMeasure>,
    pub attempts: usize,
    pub u0: GridVectorFunction,
}

/// Mather program, extreme measures and `u⁰` in one call.
pub fn run_selection(
    scheme: &DiscreteScheme,
    face: &FaceOptions,
    lp_tol: f64,
) -> Result<SelectionOutcome, SelectionError> {
    let lp: MatherLp = build_lp(scheme)?;
    let sol = solve_lp(scheme, &lp, lp_tol)?;
    let found = extreme_mather_measures(scheme, &lp, &sol, face)?;
    let sel = SelectionProblem::new(
        scheme,
        sol.critical_value,
        found.measures.clone(),
        face.face_tol,
    )?;
    let u0 = compute_u0(&sel)?;
    Ok(SelectionOutcome {
        lp: sol,
        measures: found.measures,
        attempts: found.attempts,
        u0,
    })
}

/// `u^λ_ℓ(y) − w_ℓ(y) + ⟨w, μ̄⟩` for a given discounted solution.
pub fn lower_bound_gap(
    u_lambda: &GridVectorFunction,
    w: &GridVectorFunction,
    y: usize,
    mode: usize,
    mu: &DiscreteMeasure,
) -> f64 {
    u_lambda.get(mode, y) - w.get(mode, y) + mu.integrate(w)
}

/// Checks that `w` is a critical subsolution at `c_h` (defect ≥ −`tol`),
/// then evaluates [`lower_bound_gap`] against `u^{λ, c_h}`.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_check(
    scheme: &DiscreteScheme,
    c_h: f64,
    u_lambda: &GridVectorFunction,
    w: &GridVectorFunction,
    y: usize,
    mode: usize,
    mu: &DiscreteMeasure,
    tol: f64,
) -> Result<f64, SelectionError> {
    let defect = scheme.critical_defect(w, c_h)?.min();
    if defect < -tol {
        return Err(SelectionError::NotSubsolution(defect));
    }
    Ok(lower_bound_gap(u_lambda, w, y, mode, mu))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    /// Most negative `T_0 u⁰ − u⁰` (subsolution check passes at ≥ −1e-8).
    pub min_defect: f64,
    /// `⟨u⁰, μ̄⟩` per measure (each must be ≤ 1e-6).
    pub measure_averages: Vec<f64>,
    /// Largest `T_0 u⁰ − u⁰` (tightness passes at ≤ 1e-6).
    pub max_defect: f64,
    /// `(mode, node, defect)` of the cells that fail a check.
    pub violations: Vec<(usize, usize, f64)>,
    pub subsolution: bool,
    pub constrained: bool,
    pub tight: bool,
    /// Some measure constraint is active, as maximality requires.
    pub maximal: bool,
}

impl MembershipReport {
    pub fn passed(&self) -> bool {
        self.subsolution && self.constrained && self.tight && self.maximal
    }
}

pub fn verify_u0_membership(
    sel: &SelectionProblem,
    u0: &GridVectorFunction,
) -> Result<MembershipReport, SelectionError> {
    let defect = sel.scheme.critical_defect(u0, sel.c_h)?;
    let n = sel.scheme.nodes();
    let violations: Vec<(usize, usize, f64)> = defect
        .values()
        .iter()
        .enumerate()
        .filter(|(_, d)| **d < -1e-8 || **d > 1e-6)
        .map(|(ix, d)| (ix / n, ix % n, *d))
        .collect();
    let averages: Vec<f64> = sel.measures.iter().map(|mu| mu.integrate(u0)).collect();
    let top = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MembershipReport {
        min_defect: defect.min(),
        max_defect: defect.max(),
        subsolution: defect.min() >= -1e-8,
        constrained: averages.iter().all(|a| *a <= 1e-6),
        tight: defect.max() <= 1e-6,
        maximal: top >= -1e-6,
        measure_averages: averages,
        violations,
    })
}

/// `‖u⁰(2k measures) − u⁰(k measures)‖_∞`.
pub fn stability_diagnostic(
    scheme: &DiscreteScheme,
    face: &FaceOptions,
    lp_tol: f64,
) -> Result<f64, SelectionError> {
    let a = run_selection(scheme, face, lp_tol)?;
    let doubled = FaceOptions {
        count: face.count * 2,
        ..*face
    };
    let b = run_selection(scheme, &doubled, lp_tol)?;
    Ok(a.u0.sup_distance(&b.u0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub lambda: f64,
    /// `‖u^λ − u⁰‖_∞` with `u^λ = u^{λ, c_h}`.
    pub distance: f64,
    /// `‖λ′ u^λ‖_∞`.
    pub scaled_norm: f64,
    /// Largest closedness residual of `μ^λ_y` over the probe points.
    pub closedness: f64,
    /// `max (u^λ − u⁰)`.
    pub excess: f64,
    pub sup_norm: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub critical_value: f64,
    pub rows: Vec<StudyRow>,
    /// Each distance is at most 1.1 times the previous one.
    pub monotone: bool,
    /// `max scaled_norm / λ`.
    pub linear_constant: f64,
}

impl ConvergenceReport {
    pub fn final_distance(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.distance)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "lambda,distance,scaled_norm,closedness,excess,sup_norm,lipschitz"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.lambda,
                r.distance,
                r.scaled_norm,
                r.closedness,
                r.excess,
                r.sup_norm,
                r.lipschitz
            )?;
        }
        Ok(())
    }
}

/// Solves `u^{λ, c_h}` along `lambdas` (warm-started) and compares with `u⁰`.
/// Probe points are `ℓ·N + y` indices used for the occupation measures.
pub fn convergence_study(
    scheme: &DiscreteScheme,
    c_h: f64,
    u0: &GridVectorFunction,
    lambdas: &[f64],
    probes: &[usize],
    opts: &SolveOptions,
) -> Result<(ConvergenceReport, Vec<DiscountedSolution>), SelectionError> {
    if lambdas.len() < 3 {
        return Err(SelectionError::Input(
            "the study needs at least three discount rates".into(),
        ));
    }
    if lambdas.windows(2).any(|p| p[1] >= p[0]) || lambdas.iter().any(|l| *l <= 0.0) {
        return Err(SelectionError::Input(
            "discount rates must be positive and strictly decreasing".into(),
        ));
    }
    let n = scheme.nodes();
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut sols: Vec<DiscountedSolution> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let sol = solve_discounted_with(scheme, lambda, c_h, opts, sols.last().map(|s| &s.u))?;
        let policy = synthesize_feedback(scheme, &sol.u, lambda, c_h)?;
        let closedness = probes
            .par_iter()
            .map(|&p| -> Result<f64, SelectionError> {
                let mu = exact_occupation(scheme, &policy, p % n, p / n, lambda)?;
                Ok(closedness_residual(scheme, &mu)?)
            })
            .collect::<Result<Vec<f64>, _>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let excess = sol
            .u
            .values()
            .iter()
            .zip(u0.values())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(StudyRow {
            lambda,
            distance: sol.u.sup_distance(u0),
            scaled_norm: scheme.effective_rate(lambda) * sol.u.sup_norm(),
            closedness,
            excess,
            sup_norm: sol.u.sup_norm(),
            lipschitz: sol.u.lipschitz_estimate(scheme.grid()),
        });
        sols.push(sol);
    }
    let monotone = rows
        .windows(2)
        .all(|p| p[1].distance <= 1.1 * p[0].distance);
    let linear_constant = rows
        .iter()
        .map(|r| r.scaled_norm / r.lambda)
        .fold(0.0, f64::max);
    Ok((
        ConvergenceReport {
            critical_value: c_h,
            rows,
            monotone,
            linear_constant,
        },
        sols,
    ))
}
