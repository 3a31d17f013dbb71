//! Problem definitions: Hamiltonians, coupling matrices and grids.

mod coupling;
pub mod expr;
mod grid;
mod hamiltonian;

pub use coupling::CouplingMatrix;
pub use expr::{Expr, ExprError};
pub use grid::{wrap, ControlGrid, GridVectorFunction, Point, Stencil, TorusGrid, MAX_STENCIL};
pub use hamiltonian::{HamiltonianKind, HamiltonianSpec, LegendreValue, ScalarField};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("row {row} of the coupling matrix sums to {sum:e}, expected 0")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("coupling entry ({row},{col}) = {value} is positive off the diagonal")]
    SignViolation { row: usize, col: usize, value: f64 },
    #[error("coupling matrix is reducible: some set of modes is never left")]
    Reducible,
    #[error("invalid coupling matrix: {0}")]
    Coupling(String),
    #[error("dimension {0} is not supported (expected 1 or 2)")]
    Dimension(usize),
    #[error("grid needs at least 4 nodes per axis, got {0}")]
    GridTooCoarse(usize),
    #[error("invalid control set: {0}")]
    Controls(String),
    #[error("expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("invalid field: {0}")]
    Field(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("numeric Legendre search hit its momentum radius {radius}")]
    MaximizerOnBoundary { radius: f64 },
    #[error("problem mismatch: {0}")]
    Mismatch(String),
}

/// Hamiltonians `H_1..H_m`, coupling `B` and the torus dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    dim: usize,
    hamiltonians: Vec<HamiltonianSpec>,
    coupling: CouplingMatrix,
}

impl ProblemSpec {
    pub fn new(
        hamiltonians: Vec<HamiltonianSpec>,
        coupling: CouplingMatrix,
    ) -> Result<Self, ModelError> {
        let dim = hamiltonians
            .first()
            .map(|h| h.dim())
            .ok_or_else(|| ModelError::Mismatch("at least one Hamiltonian is required".into()))?;
        if hamiltonians.iter().any(|h| h.dim() != dim) {
            return Err(ModelError::Mismatch(
                "Hamiltonians disagree on the dimension".into(),
            ));
        }
        if hamiltonians.len() != coupling.modes() {
            return Err(ModelError::Mismatch(format!(
                "{} Hamiltonians but a {}x{} coupling matrix",
                hamiltonians.len(),
                coupling.modes(),
                coupling.modes()
            )));
        }
        for h in &hamiltonians {
            h.check_fields()?;
        }
        Ok(Self {
            dim,
            hamiltonians,
            coupling,
        })
    }

    /// Scalar problem `H = ½|p|² − f` with `B = [0]`.
    pub fn scalar_quadratic(dim: usize, potential: &str) -> Result<Self, ModelError> {
        let h = HamiltonianSpec::quadratic(dim, ScalarField::parse(potential)?)?;
        Self::new(vec![h], CouplingMatrix::scalar())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.hamiltonians.len()
    }

    pub fn hamiltonian(&self, mode: usize) -> &HamiltonianSpec {
        &self.hamiltonians[mode]
    }

    pub fn hamiltonians(&self) -> &[HamiltonianSpec] {
        &self.hamiltonians
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    /// Speed bound over all modes, see [`HamiltonianSpec::speed_bound`].
    pub fn speed_bound(&self, level: f64) -> f64 {
        self.hamiltonians
            .iter()
            .map(|h| h.speed_bound(level))
            .fold(0.0, f64::max)
    }

    /// Default control radius `2·sqrt(2·(osc f + |c|) + 4)` for the
    /// quadratic catalog, generalised through the per-kind speed bound.
    pub fn default_v_max(&self, level: f64) -> f64 {
        let quadratic_only = self
            .hamiltonians
            .iter()
            .all(|h| matches!(h.kind(), HamiltonianKind::Quadratic));
        if quadratic_only {
            let osc = self
                .hamiltonians
                .iter()
                .map(|h| {
                    let (lo, hi) = h.potential().range(self.dim);
                    hi - lo
                })
                .fold(0.0, f64::max);
            2.0 * (2.0 * (osc + level.abs()) + 4.0).sqrt()
        } else {
            2.0 * (self.speed_bound(level) + 2.0)
        }
    }
}
