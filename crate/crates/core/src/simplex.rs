//! Revised simplex for equality-form linear programs
//!
//! ```text
//! minimize cᵀx  subject to  A x = b,  x ≥ 0
//! ```
//!
//! with `A` stored by sparse columns. The basis inverse is kept dense and
//! updated by elementary row operations, with a periodic refactorisation;
//! at the sizes used here (a few hundred rows, tens of thousands of columns)
//! this is cheaper than maintaining LU factors. Pricing is Dantzig's rule
//! with a switch to Bland's rule after a run of degenerate pivots.
//!
//! Phase one uses one artificial column per row. Artificials left in the
//! basis at level zero after phase one mark redundant rows and stay put.
//! A dual simplex is provided for re-solving after a change of `b`, which
//! keeps the previous optimal basis dual feasible.

use log::debug;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one objective {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded below")]
    Unbounded,
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("basis matrix became singular")]
    Singular,
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// Sparse matrix in compressed-column form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseColumns {
    rows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseColumns {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a column; duplicate row entries are summed, zeros dropped.
    pub fn push_column(&mut self, entries: &[(usize, f64)]) -> usize {
        let mut sorted: Vec<(usize, f64)> = entries.to_vec();
        sorted.sort_by_key(|e| e.0);
        let mut k = 0;
        while k < sorted.len() {
            let row = sorted[k].0;
            assert!(row < self.rows, "row {row} out of range");
            let mut v = 0.0;
            while k < sorted.len() && sorted[k].0 == row {
                v += sorted[k].1;
                k += 1;
            }
            if v != 0.0 {
                self.row_idx.push(row as u32);
                self.values.push(v);
            }
        }
        self.col_ptr.push(self.row_idx.len());
        self.col_ptr.len() - 2
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[a..b]
            .iter()
            .zip(&self.values[a..b])
            .map(|(&r, &v)| (r as usize, v))
    }

    #[inline]
    pub fn dot_column(&self, j: usize, dense: &[f64]) -> f64 {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        let mut s = 0.0;
        for k in a..b {
            s += self.values[k] * dense[self.row_idx[k] as usize];
        }
        s
    }

    /// `A x` for a dense `x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (r, v) in self.column(j) {
                    out[r] += v * xj;
                }
            }
        }
        out
    }
}

/// `min cᵀx, A x = b, x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub matrix: SparseColumns,
    pub cost: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl StandardLp {
    pub fn validate(&self) -> Result<(), LpError> {
        if self.cost.len() != self.matrix.cols() {
            return Err(LpError::Malformed(format!(
                "{} costs for {} columns",
                self.cost.len(),
                self.matrix.cols()
            )));
        }
        if self.rhs.len() != self.matrix.rows() {
            return Err(LpError::Malformed(format!(
                "{} right-hand sides for {} rows",
                self.rhs.len(),
                self.matrix.rows()
            )));
        }
        if self.cost.iter().chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-10,
            pivot_tol: 1e-7,
            max_iterations: 1_000_000,
            refactor_every: 100,
            bland_after: 60,
        }
    }
}

/// Optimal basic solution with its dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals `y` with `cᵀ − yᵀA ≥ 0` at optimality.
    pub duals: Vec<f64>,
    /// `bᵀy`.
    pub dual_objective: f64,
    /// Most negative reduced cost over structural columns (0 if none).
    pub min_reduced_cost: f64,
    /// `‖A x − b‖_∞`.
    pub primal_residual: f64,
    pub basis: Basis,
    pub iterations: usize,
}

impl LpSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs()
    }
}

/// Column per basis position; `>= n` denotes the artificial of row `k - n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub columns: Vec<usize>,
    pub structural: usize,
}

pub fn solve(lp: &StandardLp, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let mut s = Simplex::cold(lp, *opts);
    s.phase_one()?;
    s.optimize()?;
    s.finish()
}

/// Starts from `basis` when it is primal feasible for `lp`, otherwise solves
/// from scratch.
pub fn solve_from_basis(
    lp: &StandardLp,
    basis: &Basis,
    opts: &SimplexOptions,
) -> Result<LpSolution, LpError> {
    lp.validate()?;
    match Simplex::warm(lp, basis, *opts) {
        Some(mut s) if s.primal_feasible() && !s.has_active_artificial() => {
            s.optimize()?;
            s.finish()
        }
        _ => solve(lp, opts),
    }
}

/// Re-solves after a change of the right-hand side by the dual simplex,
/// starting from a basis that is dual feasible for `lp`'s costs.
pub fn resolve_rhs(
    lp: &StandardLp,
    basis: &Basis,
    opts: &SimplexOptions,
) -> Result<LpSolution, LpError> {
    lp.validate()?;
    match Simplex::warm(lp, basis, *opts) {
        Some(mut s) if s.dual_feasible() && !s.has_positive_artificial() => {
            s.phase = Phase::Two;
            let warm = s.dual_phase().and_then(|()| {
                s.restore_costs();
                // artificials that turned basic-positive cannot be repaired here
                if s.has_active_artificial() {
                    return Err(LpError::Singular);
                }
                s.optimize()?;
                s.finish()
            });
            match warm {
                // a warm basis that degrades numerically is abandoned for a cold start
                Err(LpError::Singular) => solve(lp, opts),
                other => other,
            }
        }
        _ => solve(lp, opts),
    }
}

const MAX_RECOVERIES: usize = 6;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a> {
    lp: &'a StandardLp,
    opts: SimplexOptions,
    m: usize,
    n: usize,
    /// Working right-hand side; differs from `lp.rhs` while perturbed.
    rhs: Vec<f64>,
    rhs_perturbed: bool,
    /// Additive cost perturbation used by the dual simplex.
    cost_shift: Option<Vec<f64>>,
    /// Perturbations left; after that degeneracy is handled by Bland's rule.
    perturbations: usize,
    noise: u64,
    /// sign of the artificial column of each row (sign of b_r)
    art_sign: Vec<f64>,
    basis: Vec<usize>,
    /// basis position of each column, usize::MAX when nonbasic
    position: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    phase: Phase,
    iterations: usize,
    since_refactor: usize,
    /// Basis and rhs at the last successful factorisation.
    checkpoint: Option<(Vec<usize>, Vec<f64>, bool)>,
    recoveries: usize,
}

impl<'a> Simplex<'a> {
    fn cold(lp: &'a StandardLp, opts: SimplexOptions) -> Self {
        let m = lp.matrix.rows();
        let n = lp.matrix.cols();
        let art_sign: Vec<f64> = lp
            .rhs
            .iter()
            .map(|&b| if b < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let basis: Vec<usize> = (0..m).map(|r| n + r).collect();
        let mut position = vec![usize::MAX; n + m];
        for (r, &c) in basis.iter().enumerate() {
            position[c] = r;
        }
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = art_sign[r];
        }
        let xb = lp.rhs.iter().map(|b| b.abs()).collect();
        Self {
            lp,
            opts,
            m,
            n,
            rhs: lp.rhs.clone(),
            rhs_perturbed: false,
            cost_shift: None,
            perturbations: 4,
            noise: 0x9e37_79b9_7f4a_7c15,
            art_sign,
            basis,
            position,
            binv,
            xb,
            phase: Phase::One,
            iterations: 0,
            since_refactor: 0,
            checkpoint: None,
            recoveries: 0,
        }
    }

    fn warm(lp: &'a StandardLp, basis: &Basis, opts: SimplexOptions) -> Option<Self> {
        let m = lp.matrix.rows();
        let n = lp.matrix.cols();
        if basis.columns.len() != m || basis.structural != n {
            return None;
        }
        let mut s = Self::cold(lp, opts);
        // artificial signs follow the current rhs; a basic artificial is
        // only kept when it sits at level zero
        s.position.iter_mut().for_each(|p| *p = usize::MAX);
        for (r, &c) in basis.columns.iter().enumerate() {
            if c >= n + m || s.position[c] != usize::MAX {
                return None;
            }
            s.position[c] = r;
        }
        s.basis = basis.columns.clone();
        s.phase = Phase::Two;
        s.refactor().ok()?;
        Some(s)
    }

    /// Deterministic uniform draw in `[0, 1)` (xorshift).
    fn uniform(&mut self) -> f64 {
        let mut x = self.noise;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.noise = x;
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    #[inline]
    fn cost(&self, j: usize) -> f64 {
        match self.phase {
            Phase::One => {
                if j >= self.n {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if j >= self.n {
                    0.0
                } else {
                    self.lp.cost[j] + self.cost_shift.as_ref().map_or(0.0, |s| s[j])
                }
            }
        }
    }

    fn column_dense(&self, j: usize) -> Vec<f64> {
        let mut col = vec![0.0; self.m];
        if j >= self.n {
            col[j - self.n] = self.art_sign[j - self.n];
        } else {
            for (r, v) in self.lp.matrix.column(j) {
                col[r] = v;
            }
        }
        col
    }

    #[inline]
    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        if j >= self.n {
            self.art_sign[j - self.n] * y[j - self.n]
        } else {
            self.lp.matrix.dot_column(j, y)
        }
    }

    /// `B⁻¹ a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        let mut accumulate = |k: usize, v: f64| {
            for r in 0..m {
                out[r] += self.binv[r * m + k] * v;
            }
        };
        if j >= self.n {
            accumulate(j - self.n, self.art_sign[j - self.n]);
        } else {
            for (k, v) in self.lp.matrix.column(j) {
                accumulate(k, v);
            }
        }
        out
    }

    /// `c_Bᵀ B⁻¹`.
    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for r in 0..m {
            let c = self.cost(self.basis[r]);
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for k in 0..m {
                    y[k] += c * row[k];
                }
            }
        }
        y
    }

    /// Refactorises the basis. When round-off has made it singular, falls
    /// back to the last checkpoint and pivots more conservatively from there.
    fn refactor(&mut self) -> Result<(), LpError> {
        if self.factor().is_ok() {
            self.checkpoint = Some((self.basis.clone(), self.rhs.clone(), self.rhs_perturbed));
            return Ok(());
        }
        let Some((basis, rhs, perturbed)) = self.checkpoint.clone() else {
            return Err(LpError::Singular);
        };
        if self.recoveries >= MAX_RECOVERIES {
            return Err(LpError::Singular);
        }
        self.recoveries += 1;
        debug!(
            "singular basis after {} iterations; restoring checkpoint",
            self.iterations
        );
        self.position.iter_mut().for_each(|p| *p = usize::MAX);
        for (r, &c) in basis.iter().enumerate() {
            self.position[c] = r;
        }
        self.basis = basis;
        self.rhs = rhs;
        self.rhs_perturbed = perturbed;
        self.opts.refactor_every = (self.opts.refactor_every / 2).max(1);
        self.opts.pivot_tol = (self.opts.pivot_tol * 10.0).min(1e-4);
        self.factor()
    }

    fn factor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (pos, &c) in self.basis.iter().enumerate() {
            let col = self.column_dense(c);
            for r in 0..m {
                a[r * m + pos] = col[r];
            }
        }
        self.binv = invert(&mut a, m).ok_or(LpError::Singular)?;
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.xb[r] = row.iter().zip(&self.rhs).map(|(x, y)| x * y).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, p: usize, entering: usize, alpha: &[f64]) {
        let m = self.m;
        let pivot = alpha[p];
        let theta = self.xb[p] / pivot;
        for r in 0..m {
            if r != p {
                self.xb[r] -= theta * alpha[r];
            }
        }
        self.xb[p] = theta;
        let prow: Vec<f64> = self.binv[p * m..(p + 1) * m]
            .iter()
            .map(|v| v / pivot)
            .collect();
        for r in 0..m {
            let f = alpha[r];
            if r == p || f == 0.0 {
                continue;
            }
            let row = &mut self.binv[r * m..(r + 1) * m];
            for k in 0..m {
                row[k] -= f * prow[k];
            }
        }
        self.binv[p * m..(p + 1) * m].copy_from_slice(&prow);
        let leaving = self.basis[p];
        self.position[leaving] = usize::MAX;
        self.position[entering] = p;
        self.basis[p] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    fn maybe_refactor(&mut self) -> Result<(), LpError> {
        if self.since_refactor >= self.opts.refactor_every {
            self.refactor()?;
        }
        Ok(())
    }

    fn check_budget(&self) -> Result<(), LpError> {
        if self.iterations >= self.opts.max_iterations {
            return Err(LpError::IterationLimit(self.opts.max_iterations));
        }
        Ok(())
    }

    fn enterable(&self, j: usize) -> bool {
        self.position[j] == usize::MAX && (j < self.n || self.phase == Phase::One)
    }

    fn primal_feasible(&self) -> bool {
        self.xb.iter().all(|&v| v >= -self.opts.feasibility_tol)
    }

    fn has_active_artificial(&self) -> bool {
        self.basis
            .iter()
            .zip(&self.xb)
            .any(|(&c, &v)| c >= self.n && v.abs() > self.opts.feasibility_tol)
    }

    fn has_positive_artificial(&self) -> bool {
        self.basis
            .iter()
            .zip(&self.xb)
            .any(|(&c, &v)| c >= self.n && v > self.opts.feasibility_tol)
    }

    fn dual_feasible(&self) -> bool {
        let y = self.duals();
        (0..self.n)
            .filter(|&j| self.position[j] == usize::MAX)
            .all(|j| self.cost(j) - self.dot_column(j, &y) >= -self.opts.optimality_tol * 10.0)
    }

    fn objective(&self) -> f64 {
        self.basis
            .iter()
            .zip(&self.xb)
            .map(|(&c, &v)| self.cost(c) * v)
            .sum()
    }

    /// Lifts degenerate structural basics off zero by shifting `b`.
    fn perturb_rhs(&mut self) {
        let scale = 1.0 + self.lp.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..self.m {
            let c = self.basis[r];
            let delta = scale * 1e-7 * (1.0 + self.uniform());
            if c >= self.n {
                // basic artificials are only moved in phase one, where they are costed
                if self.phase == Phase::Two {
                    continue;
                }
                self.xb[r] += delta;
                self.rhs[c - self.n] += self.art_sign[c - self.n] * delta;
                continue;
            }
            self.xb[r] += delta;
            for (row, v) in self.lp.matrix.column(c) {
                self.rhs[row] += v * delta;
            }
        }
        self.rhs_perturbed = true;
        self.perturbations -= 1;
    }

    /// Raises nonbasic costs so that zero reduced costs become positive;
    /// dual feasibility is preserved.
    fn perturb_costs(&mut self) {
        let scale = 1.0 + self.lp.cost.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut shift = self.cost_shift.take().unwrap_or_else(|| vec![0.0; self.n]);
        for j in 0..self.n {
            if self.position[j] == usize::MAX {
                shift[j] += scale * 1e-7 * (1.0 + self.uniform());
            }
        }
        self.cost_shift = Some(shift);
        self.perturbations -= 1;
    }

    fn restore_costs(&mut self) {
        self.cost_shift = None;
    }

    /// Primal simplex on the current phase's costs.
    fn primal_loop(&mut self) -> Result<(), LpError> {
        let total = self.n + if self.phase == Phase::One { self.m } else { 0 };
        let mut degenerate_run = 0usize;
        loop {
            self.check_budget()?;
            self.maybe_refactor()?;
            if degenerate_run == self.opts.bland_after / 2
                && self.perturbations > 0
                && !self.rhs_perturbed
            {
                self.perturb_rhs();
                degenerate_run = 0;
            }
            let y = self.duals();
            let bland = degenerate_run >= self.opts.bland_after;
            let mut entering = None;
            let mut best = -self.opts.optimality_tol;
            for j in 0..total {
                if !self.enterable(j) {
                    continue;
                }
                let d = self.cost(j) - self.dot_column(j, &y);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else {
                return Ok(());
            };
            let alpha = self.ftran(q);
            let Some(p) = self.ratio_test(&alpha, bland) else {
                return Err(LpError::Unbounded);
            };
            let step = self.xb[p].max(0.0) / alpha[p];
            if step <= self.opts.feasibility_tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.xb[p] = self.xb[p].max(0.0);
            self.pivot(p, q, &alpha);
        }
    }

    /// Artificials still basic in phase two sit on redundant rows, where
    /// `alpha` is round-off; pivoting on them would make the basis singular.
    #[inline]
    fn blocking_row(&self, r: usize) -> bool {
        self.phase == Phase::One || self.basis[r] < self.n
    }

    /// Two-pass Harris ratio test; under Bland's rule the smallest basic
    /// column index wins ties.
    fn ratio_test(&self, alpha: &[f64], bland: bool) -> Option<usize> {
        let tol = self.opts.pivot_tol;
        let feas = self.opts.feasibility_tol;
        let mut bound = f64::INFINITY;
        for r in 0..self.m {
            if alpha[r] > tol && self.blocking_row(r) {
                bound = bound.min((self.xb[r].max(0.0) + feas) / alpha[r]);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut chosen: Option<usize> = None;
        for r in 0..self.m {
            if alpha[r] <= tol || !self.blocking_row(r) {
                continue;
            }
            let ratio = self.xb[r].max(0.0) / alpha[r];
            if ratio > bound {
                continue;
            }
            chosen = match chosen {
                None => Some(r),
                Some(c) => {
                    let better = if bland {
                        let rc = self.xb[c].max(0.0) / alpha[c];
                        ratio < rc - 1e-15 || (ratio <= rc + 1e-15 && self.basis[r] < self.basis[c])
                    } else {
                        // prefer kicking out artificials, then large pivots
                        let art_r = self.basis[r] >= self.n;
                        let art_c = self.basis[c] >= self.n;
                        (art_r && !art_c) || (art_r == art_c && alpha[r] > alpha[c])
                    };
                    if better {
                        Some(r)
                    } else {
                        Some(c)
                    }
                }
            };
        }
        chosen
    }

    fn phase_one(&mut self) -> Result<(), LpError> {
        self.phase = Phase::One;
        self.settle()?;
        self.refactor()?;
        let infeasibility = self.objective();
        let scale = 1.0 + self.lp.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if infeasibility > self.opts.feasibility_tol * scale * 10.0 {
            return Err(LpError::Infeasible(infeasibility));
        }
        self.drive_out_artificials()?;
        self.phase = Phase::Two;
        Ok(())
    }

    /// Swaps zero-level artificials for structural columns where the basis
    /// allows; the rest belong to redundant rows.
    fn drive_out_artificials(&mut self) -> Result<(), LpError> {
        let m = self.m;
        for p in 0..m {
            if self.basis[p] < self.n {
                continue;
            }
            let row: Vec<f64> = self.binv[p * m..(p + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.position[j] != usize::MAX {
                    continue;
                }
                let a = self.lp.matrix.dot_column(j, &row).abs();
                if a > 1e-7 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((j, _)) = best {
                let alpha = self.ftran(j);
                self.xb[p] = 0.0;
                self.pivot(p, j, &alpha);
            }
        }
        self.refactor()
    }

    fn optimize(&mut self) -> Result<(), LpError> {
        self.phase = Phase::Two;
        self.settle()
    }

    /// Primal simplex in the current phase followed by removal of any
    /// perturbation, repairing feasibility with the dual simplex.
    fn settle(&mut self) -> Result<(), LpError> {
        self.primal_loop()?;
        for _ in 0..8 {
            let mut changed = false;
            if self.rhs_perturbed {
                self.rhs.copy_from_slice(&self.lp.rhs);
                self.rhs_perturbed = false;
                self.refactor()?;
                changed = true;
                if !self.primal_feasible() {
                    self.dual_phase()?;
                }
            }
            if self.cost_shift.is_some() {
                self.restore_costs();
                changed = true;
            }
            if !changed {
                return Ok(());
            }
            self.primal_loop()?;
        }
        Ok(())
    }

    /// Dual simplex: keeps reduced costs nonnegative while removing primal
    /// infeasibilities.
    fn dual_phase(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut stalled = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        loop {
            self.check_budget()?;
            self.maybe_refactor()?;
            if stalled == self.opts.bland_after / 2
                && self.phase == Phase::Two
                && self.perturbations > 0
                && self.cost_shift.is_none()
            {
                self.perturb_costs();
                stalled = 0;
            }
            let bland = stalled >= self.opts.bland_after;
            let mut leave: Option<usize> = None;
            let mut worst = -self.opts.feasibility_tol;
            for r in 0..m {
                if self.xb[r] < worst
                    || (bland && self.xb[r] < -self.opts.feasibility_tol && leave.is_none())
                {
                    leave = Some(r);
                    if bland {
                        break;
                    }
                    worst = self.xb[r];
                }
            }
            let Some(p) = leave else {
                return Ok(());
            };
            let y = self.duals();
            let row: Vec<f64> = self.binv[p * m..(p + 1) * m].to_vec();
            let tol = self.opts.pivot_tol;
            let opt = self.opts.optimality_tol;
            // Harris pass over the dual ratios d_j / (−α_pj)
            let mut cands = Vec::new();
            let mut bound = f64::INFINITY;
            for j in 0..self.n {
                if self.position[j] != usize::MAX {
                    continue;
                }
                let a = self.lp.matrix.dot_column(j, &row);
                if a < -tol {
                    let d = (self.cost(j) - self.dot_column(j, &y)).max(0.0);
                    bound = bound.min((d + opt) / -a);
                    cands.push((j, d, a));
                }
            }
            if cands.is_empty() {
                return Err(LpError::Infeasible(-self.xb[p]));
            }
            let mut pick: Option<(usize, f64, f64)> = None;
            for &(j, d, a) in &cands {
                let ratio = d / -a;
                if ratio > bound {
                    continue;
                }
                pick = match pick {
                    None => Some((j, ratio, a)),
                    Some((pj, pr, pa)) => {
                        let better = if bland {
                            ratio < pr - 1e-15 || (ratio <= pr + 1e-15 && j < pj)
                        } else {
                            a.abs() > pa.abs()
                        };
                        if better {
                            Some((j, ratio, a))
                        } else {
                            Some((pj, pr, pa))
                        }
                    }
                };
            }
            let (q, _, _) = pick.expect("nonempty candidate set");
            let alpha = self.ftran(q);
            if alpha[p].abs() <= tol {
                // row and column computations disagree; refresh and retry
                self.refactor()?;
                stalled += 1;
                continue;
            }
            self.pivot(p, q, &alpha);
            let obj = self.objective();
            if obj <= last_obj + 1e-12 * (1.0 + obj.abs()) {
                stalled += 1;
            } else {
                stalled = 0;
            }
            last_obj = obj;
        }
    }

    fn finish(mut self) -> Result<LpSolution, LpError> {
        self.refactor()?;
        if !self.primal_feasible() {
            // round-off after refactorisation; polish with the dual simplex
            self.dual_phase()?;
            self.restore_costs();
            self.refactor()?;
            self.primal_loop()?;
            self.refactor()?;
        }
        let mut x = vec![0.0; self.n];
        for (r, &c) in self.basis.iter().enumerate() {
            if c < self.n {
                x[c] = self.xb[r].max(0.0);
            }
        }
        let y = self.duals();
        let min_reduced_cost = (0..self.n)
            .filter(|&j| self.position[j] == usize::MAX)
            .map(|j| self.lp.cost[j] - self.lp.matrix.dot_column(j, &y))
            .fold(0.0, f64::min);
        let ax = self.lp.matrix.mul(&x);
        let primal_residual = ax
            .iter()
            .zip(&self.lp.rhs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let objective = x.iter().zip(&self.lp.cost).map(|(a, c)| a * c).sum();
        let dual_objective = y.iter().zip(&self.lp.rhs).map(|(a, b)| a * b).sum();
        debug!(
            "simplex finished: {} iterations, objective {objective}, residual {primal_residual:e}",
            self.iterations
        );
        Ok(LpSolution {
            x,
            objective,
            duals: y,
            dual_objective,
            min_reduced_cost,
            primal_residual,
            basis: Basis {
                columns: self.basis,
                structural: self.n,
            },
            iterations: self.iterations,
        })
    }
}

/// Gauss–Jordan inverse with partial pivoting; `a` is destroyed.
fn invert(a: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for r in 0..m {
        inv[r * m + r] = 1.0;
    }
    for col in 0..m {
        let (piv, big) =
            (col..m)
                .map(|r| (r, a[r * m + col].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if big < 1e-13 {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap(piv * m + k, col * m + k);
                inv.swap(piv * m + k, col * m + k);
            }
        }
        let d = a[col * m + col];
        for k in 0..m {
            a[col * m + k] /= d;
            inv[col * m + k] /= d;
        }
        let prow_a: Vec<f64> = a[col * m..(col + 1) * m].to_vec();
        let prow_i: Vec<f64> = inv[col * m..(col + 1) * m].to_vec();
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r * m + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..m {
                a[r * m + k] -= f * prow_a[k];
                inv[r * m + k] -= f * prow_i[k];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp_from_dense(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> StandardLp {
        let rows = a.len();
        let mut matrix = SparseColumns::new(rows);
        for j in 0..c.len() {
            let col: Vec<(usize, f64)> = (0..rows).map(|r| (r, a[r][j])).collect();
            matrix.push_column(&col);
        }
        StandardLp {
            matrix,
            cost: c.to_vec(),
            rhs: b.to_vec(),
        }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 → optimum 36 at (2, 6)
        let a = vec![
            vec![1.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 1.0, 0.0],
            vec![3.0, 2.0, 0.0, 0.0, 1.0],
        ];
        let lp = lp_from_dense(&a, &[4.0, 12.0, 18.0], &[-3.0, -5.0, 0.0, 0.0, 0.0]);
        let sol = solve(&lp, &SimplexOptions::default()).unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-10);
        assert!((sol.x[0] - 2.0).abs() < 1e-10 && (sol.x[1] - 6.0).abs() < 1e-10);
        assert!(sol.duality_gap() < 1e-10);
        assert!(sol.min_reduced_cost > -1e-10);
    }

    #[test]
    fn single_variable() {
        let lp = lp_from_dense(&[vec![1.0]], &[1.0], &[0.25]);
        let sol = solve(&lp, &SimplexOptions::default()).unwrap();
        assert_eq!(sol.x, vec![1.0]);
        assert_eq!(sol.duality_gap(), 0.0);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x1 + x2 = -1 with x >= 0
        let lp = lp_from_dense(&[vec![1.0, 1.0]], &[-1.0], &[1.0, 1.0]);
        assert!(matches!(
            solve(&lp, &SimplexOptions::default()),
            Err(LpError::Infeasible(_))
        ));
        // x1 - x2 = 1, minimize -x1
        let lp = lp_from_dense(&[vec![1.0, -1.0]], &[1.0], &[-1.0, 0.0]);
        assert!(matches!(
            solve(&lp, &SimplexOptions::default()),
            Err(LpError::Unbounded)
        ));
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        // second row duplicates the first
        let a = vec![
            vec![1.0, 1.0, 1.0],
            vec![2.0, 2.0, 2.0],
            vec![1.0, -1.0, 0.0],
        ];
        let lp = lp_from_dense(&a, &[1.0, 2.0, 0.0], &[1.0, 2.0, 0.5]);
        let sol = solve(&lp, &SimplexOptions::default()).unwrap();
        assert!((sol.objective - 0.5).abs() < 1e-12, "{}", sol.objective);
        assert!(sol.primal_residual < 1e-12);
    }

    #[test]
    fn rhs_resolve_matches_cold_solve() {
        let a = vec![
            vec![1.0, 2.0, 1.0, 0.0, -1.0],
            vec![3.0, 1.0, 0.0, 1.0, 2.0],
        ];
        let c = [1.0, 1.5, 0.2, 0.3, 0.4];
        let lp = lp_from_dense(&a, &[4.0, 5.0], &c);
        let first = solve(&lp, &SimplexOptions::default()).unwrap();
        let lp2 = lp_from_dense(&a, &[1.0, 9.0], &c);
        let warm = resolve_rhs(&lp2, &first.basis, &SimplexOptions::default()).unwrap();
        let cold = solve(&lp2, &SimplexOptions::default()).unwrap();
        assert!((warm.objective - cold.objective).abs() < 1e-10);
        let again = solve_from_basis(&lp2, &cold.basis, &SimplexOptions::default()).unwrap();
        assert_eq!(again.iterations, 0);
    }

    /// Brute-force oracle: enumerate every basis of a tiny LP.
    fn brute_force(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
        let m = a.len();
        let n = c.len();
        let mut best: Option<f64> = None;
        let mut subset = vec![0usize; m];
        fn next(subset: &mut [usize], n: usize) -> bool {
            let m = subset.len();
            for i in (0..m).rev() {
                if subset[i] < n - m + i {
                    subset[i] += 1;
                    for k in i + 1..m {
                        subset[k] = subset[k - 1] + 1;
                    }
                    return true;
                }
            }
            false
        }
        for (i, s) in subset.iter_mut().enumerate() {
            *s = i;
        }
        loop {
            let mut dense = vec![0.0; m * m];
            for r in 0..m {
                for (k, &j) in subset.iter().enumerate() {
                    dense[r * m + k] = a[r][j];
                }
            }
            if let Some(inv) = invert(&mut dense, m) {
                let xb: Vec<f64> = (0..m)
                    .map(|r| (0..m).map(|k| inv[r * m + k] * b[k]).sum())
                    .collect();
                if xb.iter().all(|&v| v >= -1e-9) {
                    let obj: f64 = subset.iter().zip(&xb).map(|(&j, v)| c[j] * v).sum();
                    best = Some(best.map_or(obj, |bv: f64| bv.min(obj)));
                }
            }
            if !next(&mut subset, n) {
                break;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn agrees_with_basis_enumeration(
            raw in proptest::collection::vec(-3i32..4, 18),
            costs in proptest::collection::vec(0i32..5, 6),
            rhs in proptest::collection::vec(0i32..6, 3),
        ) {
            // bounded: the first row is a positive mass constraint
            let mut a = vec![vec![0.0; 6]; 3];
            for r in 0..3 {
                for j in 0..6 {
                    a[r][j] = raw[r * 6 + j] as f64;
                }
            }
            for j in 0..6 {
                a[0][j] = 1.0 + a[0][j].abs();
            }
            let b: Vec<f64> = rhs.iter().map(|&v| v as f64).collect();
            let c: Vec<f64> = costs.iter().map(|&v| v as f64 - 2.0).collect();
            let lp = lp_from_dense(&a, &b, &c);
            let oracle = brute_force(&a, &b, &c);
            match (solve(&lp, &SimplexOptions::default()), oracle) {
                (Ok(sol), Some(best)) => {
                    prop_assert!((sol.objective - best).abs() < 1e-7, "{} vs {}", sol.objective, best);
                    prop_assert!(sol.duality_gap() < 1e-8);
                    prop_assert!(sol.primal_residual < 1e-8);
                }
                (Err(LpError::Infeasible(_)), None) => {}
                (got, want) => prop_assert!(false, "solver {:?} vs oracle {:?}", got.map(|s| s.objective), want),
            }
        }
    }
}
