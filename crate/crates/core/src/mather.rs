//! Discrete closed measures and the occupation-measure linear program
//!
//! A measure `μ(x, v_k, i)` on nodes × controls × modes is closed when it
//! is invariant under the one-step kernel of the scheme:
//!
//! ```text
//! Σ_{x,k,i} μ(x,k,i) (P_h)_ij α_{x−h v_k}(y) = Σ_k μ(y,k,j)   for every (y, j)
//! ```
//!
//! Minimising `Σ L μ` over closed probability measures gives `−c_h`, and the
//! row duals yield a critical subsolution `w` with
//! `w ≤ hL + K w + h c_h` on every cell.

use std::io::Write;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{GridVectorFunction, ModelError};
use crate::simplex::{self, Basis, LpError, SimplexOptions, SparseColumns, StandardLp};
use crate::solver::DiscreteScheme;

/// Largest constraint matrix accepted by [`build_lp`].
pub const MAX_NONZEROS: usize = 5_000_000;

/// Weight below which a cell is not counted as support.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MatherError {
    #[error("constraint matrix would have {0} nonzeros, above the limit of {MAX_NONZEROS}")]
    TooLarge(usize),
    #[error("closed-measure program is infeasible; the stationarity rows are inconsistent")]
    Infeasible,
    #[error("dual of the closed-measure program is unbounded")]
    UnboundedDual,
    #[error(transparent)]
    Lp(LpError),
    #[error("measure has shape {found:?}, scheme expects {expected:?}")]
    Shape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<LpError> for MatherError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::Infeasible(_) => MatherError::Infeasible,
            LpError::Unbounded => MatherError::UnboundedDual,
            other => MatherError::Lp(other),
        }
    }
}

/// Nonnegative weights on `(mode, node, control)` cells, stored at
/// `(i·N + x)·K + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    nodes: usize,
    modes: usize,
    controls: usize,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn zeros(nodes: usize, modes: usize, controls: usize) -> Self {
        Self {
            nodes,
            modes,
            controls,
            weights: vec![0.0; nodes * modes * controls],
        }
    }

    pub fn from_weights(
        nodes: usize,
        modes: usize,
        controls: usize,
        weights: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if weights.len() != nodes * modes * controls {
            return Err(ModelError::Shape {
                expected: nodes * modes * controls,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::Field(
                "measure weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            nodes,
            modes,
            controls,
            weights,
        })
    }

    /// Unit mass on one cell.
    pub fn point_mass(
        nodes: usize,
        modes: usize,
        controls: usize,
        mode: usize,
        node: usize,
        control: usize,
    ) -> Self {
        let mut m = Self::zeros(nodes, modes, controls);
        let idx = m.index(mode, node, control);
        m.weights[idx] = 1.0;
        m
    }

    pub fn for_scheme(scheme: &DiscreteScheme) -> Self {
        Self::zeros(scheme.nodes(), scheme.modes(), scheme.controls().len())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nodes, self.modes, self.controls)
    }

    #[inline]
    pub fn index(&self, mode: usize, node: usize, control: usize) -> usize {
        (mode * self.nodes + node) * self.controls + control
    }

    #[inline]
    pub fn get(&self, mode: usize, node: usize, control: usize) -> f64 {
        self.weights[self.index(mode, node, control)]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Scales to unit mass; no-op on the zero measure.
    pub fn normalize(&mut self) {
        let total = self.mass();
        if total > 0.0 {
            self.weights.iter_mut().for_each(|w| *w /= total);
        }
    }

    /// `Σ_k μ(x, k, i)` as a grid function.
    pub fn state_marginal(&self) -> GridVectorFunction {
        let vals = self
            .weights
            .chunks(self.controls)
            .map(|c| c.iter().sum())
            .collect();
        GridVectorFunction::from_values(self.nodes, self.modes, vals).expect("shape is consistent")
    }

    /// `Σ w_i(x) μ(x, v, i)`.
    pub fn integrate(&self, w: &GridVectorFunction) -> f64 {
        self.weights
            .chunks(self.controls)
            .zip(w.values())
            .map(|(c, wv)| wv * c.iter().sum::<f64>())
            .sum()
    }

    /// `Σ L μ` under the scheme's Lagrangian table.
    pub fn action(&self, scheme: &DiscreteScheme) -> f64 {
        self.weights
            .iter()
            .zip(scheme.lagrangian_table())
            .map(|(w, l)| w * l)
            .sum()
    }

    /// Cells with weight above `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > threshold)
            .map(|(idx, _)| idx)
            .collect()
    }

    /// Splits a cell index into `(mode, node, control)`.
    pub fn cell(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.controls;
        let rest = idx / self.controls;
        (rest / self.nodes, rest % self.nodes, k)
    }

    fn check(&self, scheme: &DiscreteScheme) -> Result<(), MatherError> {
        let expected = (scheme.nodes(), scheme.modes(), scheme.controls().len());
        if self.shape() != expected {
            return Err(MatherError::Shape {
                expected,
                found: self.shape(),
            });
        }
        Ok(())
    }

    /// CSV rows `x[,y],v[,v_y],mode,weight` over the nonzero cells.
    pub fn write_csv<W: Write>(&self, scheme: &DiscreteScheme, mut out: W) -> std::io::Result<()> {
        let two_d = scheme.grid().dim() == 2;
        if two_d {
            writeln!(out, "x,y,v_x,v_y,mode,weight")?;
        } else {
            writeln!(out, "x,v,mode,weight")?;
        }
        for (idx, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (i, x, k) = self.cell(idx);
            let p = scheme.grid().node(x);
            let v = scheme.controls().get(k);
            if two_d {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                    p[0],
                    p[1],
                    v[0],
                    v[1],
                    i + 1,
                    w
                )?;
            } else {
                writeln!(out, "{:.16e},{:.16e},{},{:.16e}", p[0], v[0], i + 1, w)?;
            }
        }
        Ok(())
    }

    /// Support cells as JSON-ready records.
    pub fn support_records(&self, scheme: &DiscreteScheme, threshold: f64) -> Vec<SupportRecord> {
        self.support(threshold)
            .into_iter()
            .map(|idx| {
                let (i, x, k) = self.cell(idx);
                let p = scheme.grid().node(x);
                let v = scheme.controls().get(k);
                let dim = scheme.grid().dim();
                SupportRecord {
                    x: p[..dim].to_vec(),
                    v: v[..dim].to_vec(),
                    mode: i + 1,
                    weight: self.weights[idx],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRecord {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub mode: usize,
    pub weight: f64,
}

/// Stationarity rows `(j·N + y)` followed by the mass row.
#[derive(Debug, Clone)]
pub struct MatherLp {
    pub lp: StandardLp,
    pub nodes: usize,
    pub modes: usize,
    pub controls: usize,
}

impl MatherLp {
    pub fn mass_row(&self) -> usize {
        self.nodes * self.modes
    }
}

/// Column of cell `(i, x, k)` in the stationarity block:
/// `+P_ij α_s` at `(j, s)` and `−1` at `(i, x)`.
pub(crate) fn stationarity_column(
    scheme: &DiscreteScheme,
    i: usize,
    x: usize,
    k: usize,
    out: &mut Vec<(usize, f64)>,
) {
    let n = scheme.nodes();
    out.clear();
    let st = scheme.stencil(x, k);
    for j in 0..scheme.modes() {
        let p = scheme.transition(i, j);
        if p == 0.0 {
            continue;
        }
        for (s, a) in st.iter() {
            out.push((j * n + s, p * a));
        }
    }
    out.push((i * n + x, -1.0));
}

pub fn build_lp(scheme: &DiscreteScheme) -> Result<MatherLp, MatherError> {
    let (n, m, nk) = (scheme.nodes(), scheme.modes(), scheme.controls().len());
    let per_col = (0..m)
        .map(|i| (0..m).filter(|&j| scheme.transition(i, j) > 0.0).count())
        .max()
        .unwrap_or(1)
        * (1 << scheme.grid().dim())
        + 2;
    let estimate = per_col * n * m * nk;
    if estimate > MAX_NONZEROS {
        return Err(MatherError::TooLarge(estimate));
    }
    let rows = n * m + 1;
    let mut matrix = SparseColumns::new(rows);
    let mut col = Vec::with_capacity(per_col);
    for i in 0..m {
        for x in 0..n {
            for k in 0..nk {
                stationarity_column(scheme, i, x, k, &mut col);
                col.push((n * m, 1.0));
                matrix.push_column(&col);
            }
        }
    }
    let mut rhs = vec![0.0; rows];
    rhs[n * m] = 1.0;
    Ok(MatherLp {
        lp: StandardLp {
            matrix,
            cost: scheme.lagrangian_table().to_vec(),
            rhs,
        },
        nodes: n,
        modes: m,
        controls: nk,
    })
}

/// Optimal closed measure with its dual certificate.
#[derive(Debug, Clone)]
pub struct MatherSolution {
    pub measure: DiscreteMeasure,
    /// `min Σ L μ`.
    pub objective: f64,
    /// `c_h = −objective`.
    pub critical_value: f64,
    /// `|primal objective − dual objective|`.
    pub duality_gap: f64,
    /// Most negative reduced cost (dual infeasibility), 0 when dual feasible.
    pub dual_infeasibility: f64,
    pub primal_residual: f64,
    pub closedness_residual: f64,
    /// Critical subsolution `w = −h φ` from the stationarity duals.
    pub subsolution: GridVectorFunction,
    pub basis: Basis,
    pub iterations: usize,
}

pub fn solve_lp(
    scheme: &DiscreteScheme,
    lp: &MatherLp,
    tol: f64,
) -> Result<MatherSolution, MatherError> {
    let opts = SimplexOptions {
        feasibility_tol: tol.min(1e-9),
        ..SimplexOptions::default()
    };
    let sol = simplex::solve(&lp.lp, &opts)?;
    let measure = DiscreteMeasure::from_weights(lp.nodes, lp.modes, lp.controls, sol.x.clone())?;
    let closedness = closedness_residual(scheme, &measure)?;
    let h = scheme.h();
    let phi = &sol.duals[..lp.nodes * lp.modes];
    let subsolution =
        GridVectorFunction::from_values(lp.nodes, lp.modes, phi.iter().map(|p| -h * p).collect())?;
    Ok(MatherSolution {
        critical_value: -sol.objective,
        objective: sol.objective,
        duality_gap: sol.duality_gap(),
        dual_infeasibility: -sol.min_reduced_cost.min(0.0),
        primal_residual: sol.primal_residual,
        closedness_residual: closedness,
        measure,
        subsolution,
        basis: sol.basis,
        iterations: sol.iterations,
    })
}

/// `max_{y,j} |Σ μ(x,k,i) (P_h)_ij α_{x−hv_k}(y) − Σ_k μ(y,k,j)|`.
pub fn closedness_residual(
    scheme: &DiscreteScheme,
    mu: &DiscreteMeasure,
) -> Result<f64, MatherError> {
    mu.check(scheme)?;
    let stationarity = stationarity_defect(scheme, mu);
    Ok(stationarity.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// Per-row stationarity defect `(inflow − outflow)` at `(j·N + y)`.
pub fn stationarity_defect(scheme: &DiscreteScheme, mu: &DiscreteMeasure) -> Vec<f64> {
    let (n, m, nk) = (scheme.nodes(), scheme.modes(), scheme.controls().len());
    let mut defect = vec![0.0; n * m];
    let mut col = Vec::new();
    for i in 0..m {
        for x in 0..n {
            for k in 0..nk {
                let w = mu.get(i, x, k);
                if w == 0.0 {
                    continue;
                }
                stationarity_column(scheme, i, x, k, &mut col);
                for &(r, a) in &col {
                    defect[r] += w * a;
                }
            }
        }
    }
    defect
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceOptions {
    pub count: usize,
    pub seed: u64,
    /// Slack on the optimal value that defines the face.
    pub face_tol: f64,
}

impl Default for FaceOptions {
    fn default() -> Self {
        Self {
            count: 16,
            seed: 0,
            face_tol: 1e-8,
        }
    }
}

/// Optimal measures found on the face `{closed, mass 1, Σ L μ ≤ z* + tol}`.
#[derive(Debug, Clone)]
pub struct ExtremeMeasures {
    pub measures: Vec<DiscreteMeasure>,
    /// Auxiliary objectives that were optimised.
    pub attempts: usize,
}

/// Extracts vertices of the optimal face by minimising random Gaussian
/// objectives over it. The LP optimum itself comes first; measures are
/// deduplicated by their support above [`SUPPORT_THRESHOLD`].
pub fn extreme_mather_measures(
    scheme: &DiscreteScheme,
    lp: &MatherLp,
    optimum: &MatherSolution,
    opts: &FaceOptions,
) -> Result<ExtremeMeasures, MatherError> {
    if opts.count == 0 {
        return Ok(ExtremeMeasures {
            measures: Vec::new(),
            attempts: 0,
        });
    }
    let ncols = lp.lp.matrix.cols();
    let rows = lp.lp.matrix.rows();
    // face program: Mather rows plus  Σ L μ + s = z* + tol
    let mut matrix = SparseColumns::new(rows + 1);
    for j in 0..ncols {
        let mut col: Vec<(usize, f64)> = lp.lp.matrix.column(j).collect();
        col.push((rows, lp.lp.cost[j]));
        matrix.push_column(&col);
    }
    let slack = matrix.push_column(&[(rows, 1.0)]);
    let mut rhs = lp.lp.rhs.clone();
    // half the tolerance in the program leaves room for the cleanup below
    rhs.push(optimum.objective + 0.5 * opts.face_tol);
    // previous optimal basis plus the slack is primal feasible for the face
    let mut columns: Vec<usize> = optimum
        .basis
        .columns
        .iter()
        .map(|&c| if c >= ncols { c + 1 } else { c })
        .collect();
    columns.push(slack);
    let basis = Basis {
        columns,
        structural: ncols + 1,
    };
    let simplex_opts = SimplexOptions::default();
    let results: Vec<Result<DiscreteMeasure, MatherError>> = (1..opts.count)
        .into_par_iter()
        .map(|q| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(q as u64);
            let mut cost: Vec<f64> = (0..ncols)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            cost.push(0.0);
            let face = StandardLp {
                matrix: matrix.clone(),
                cost,
                rhs: rhs.clone(),
            };
            let sol = simplex::solve_from_basis(&face, &basis, &simplex_opts)?;
            let mut weights = sol.x[..ncols].to_vec();
            weights.iter_mut().for_each(|w| *w = w.max(0.0));
            let mut mu = DiscreteMeasure::from_weights(lp.nodes, lp.modes, lp.controls, weights)?;
            mu.normalize();
            Ok(mu)
        })
        .collect();
    let mut measures = vec![optimum.measure.clone()];
    let mut supports = vec![optimum.measure.support(SUPPORT_THRESHOLD)];
    for r in results {
        let mu = r?;
        let excess = mu.action(scheme) - optimum.objective;
        let closed = closedness_residual(scheme, &mu)?;
        if excess > opts.face_tol || closed > 1e-8 {
            debug!("discarding face vertex: excess {excess:e}, closedness {closed:e}");
            continue;
        }
        let supp = mu.support(SUPPORT_THRESHOLD);
        if !supports.contains(&supp) {
            supports.push(supp);
            measures.push(mu);
        }
    }
    Ok(ExtremeMeasures {
        measures,
        attempts: opts.count,
    })
}
