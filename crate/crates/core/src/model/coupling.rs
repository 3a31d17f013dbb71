use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelError;

const ROW_SUM_TOL: f64 = 1e-12;

/// Validated coupling matrix `B`: nonpositive off-diagonal entries, zero
/// row sums and irreducible, so that `-B` generates a Markov chain on modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl CouplingMatrix {
    /// Checks sign, row-sum and irreducibility conditions on a row-major matrix.
    pub fn validate(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let m = rows.len();
        if m == 0 {
            return Err(ModelError::Coupling("empty coupling matrix".into()));
        }
        let mut entries = Vec::with_capacity(m * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::Coupling(format!(
                    "row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(ModelError::Coupling(format!(
                    "non-finite entry {v} in row {}",
                    i + 1
                )));
            }
            entries.extend_from_slice(row);
        }
        for i in 0..m {
            for j in 0..m {
                if i != j && entries[i * m + j] > 0.0 {
                    return Err(ModelError::SignViolation {
                        row: i + 1,
                        col: j + 1,
                        value: entries[i * m + j],
                    });
                }
            }
            let sum: f64 = entries[i * m..(i + 1) * m].iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(ModelError::RowSumViolation { row: i + 1, sum });
            }
        }
        if !strongly_connected(m, |i, j| entries[i * m + j] != 0.0) {
            return Err(ModelError::Reducible);
        }
        // diagonal taken from the off-diagonal entries, absorbing the row-sum tolerance
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| entries[i * m + j]).sum();
            entries[i * m + i] = -off;
        }
        Ok(Self { m, entries })
    }

    pub fn from_flat(m: usize, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != m * m {
            return Err(ModelError::Coupling(format!(
                "expected {} entries for a {m}x{m} matrix, got {}",
                m * m,
                flat.len()
            )));
        }
        let rows: Vec<Vec<f64>> = flat.chunks(m).map(|r| r.to_vec()).collect();
        Self::validate(&rows)
    }

    /// The 1x1 zero matrix of the scalar case.
    pub fn scalar() -> Self {
        Self {
            m: 1,
            entries: vec![0.0],
        }
    }

    /// `[[k, -k], [-k, k]]`.
    pub fn symmetric_pair(rate: f64) -> Result<Self, ModelError> {
        Self::validate(&[vec![rate, -rate], vec![-rate, rate]])
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.m).map(|i| self.diagonal(i)).fold(0.0, f64::max)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    /// `B g` for a vector indexed by mode, in generator form
    /// `Σ_{j≠i} b_ij (g_j − g_i)` so constants map to exact zeros.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                (0..self.m)
                    .filter(|&j| j != i)
                    .map(|j| self.get(i, j) * (g[j] - g[i]))
                    .sum()
            })
            .collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.m, &self.entries)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.m).map(|r| r.to_vec()).collect()
    }
}

/// Every mode reaches every other along edges `i -> j` with `edge(i, j)`.
/// For zero-row-sum matrices this is equivalent to the subset condition:
/// each proper subset has an edge leaving it.
fn strongly_connected(m: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |start: usize, forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let e = if forward { edge(i, j) } else { edge(j, i) };
                if j != i && e && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(0, true) && reach(0, false)
}
