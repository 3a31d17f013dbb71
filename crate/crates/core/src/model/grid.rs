//! Uniform periodic grids on the unit torus, finite control sets and
//! grid-sampled vector functions.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// A point of the torus. Only the first `dim` coordinates are meaningful.
pub type Point = [f64; 2];

/// Maximum number of nodes touched by a multilinear stencil (2^d, d <= 2).
pub const MAX_STENCIL: usize = 4;

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(coord: f64) -> f64 {
    let r = coord - coord.floor();
    // coord.floor() can round so that r == 1.0 for tiny negative inputs
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[inline]
fn wrapped_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

/// Interpolation weights of a point onto grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub nodes: [u32; MAX_STENCIL],
    pub weights: [f64; MAX_STENCIL],
    pub len: usize,
}

impl Stencil {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |s| (self.nodes[s] as usize, self.weights[s]))
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.iter().map(|(node, w)| w * values[node]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::Dimension(dim));
        }
        if n < 4 {
            return Err(ModelError::GridTooCoarse(n));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, index: usize) -> Point {
        let dx = self.spacing();
        match self.dim {
            1 => [index as f64 * dx, 0.0],
            _ => [(index % self.n) as f64 * dx, (index / self.n) as f64 * dx],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    pub fn wrap_point(&self, p: Point) -> Point {
        let mut out = [wrap(p[0]), 0.0];
        if self.dim == 2 {
            out[1] = wrap(p[1]);
        }
        out
    }

    /// Euclidean distance on the flat torus of side 1.
    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        (0..self.dim)
            .map(|k| wrapped_delta(a[k], b[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn nearest_node(&self, p: &Point) -> usize {
        let n = self.n as f64;
        let axis = |c: f64| ((wrap(c) * n).round() as usize) % self.n;
        match self.dim {
            1 => axis(p[0]),
            _ => axis(p[0]) + self.n * axis(p[1]),
        }
    }

    /// Periodic multilinear interpolation weights at `p`.
    pub fn stencil(&self, p: &Point) -> Stencil {
        let n = self.n as f64;
        let mut cell = [0.0f64; 2];
        for k in 0..self.dim {
            cell[k] = wrap(p[k]) * n;
        }
        self.stencil_in_cells(cell)
    }

    /// Stencil of `node + displacement`, computed in cell units so that a
    /// zero displacement lands exactly on the node.
    pub fn stencil_from_node(&self, node: usize, displacement: &Point) -> Stencil {
        let n = self.n as f64;
        let (ix, iy) = (node % self.n, node / self.n);
        self.stencil_in_cells([
            ix as f64 + displacement[0] * n,
            iy as f64 + displacement[1] * n,
        ])
    }

    fn stencil_in_cells(&self, cell: [f64; 2]) -> Stencil {
        let mut lo = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for k in 0..self.dim {
            let s = cell[k];
            let f = s.floor();
            lo[k] = (f as i64).rem_euclid(self.n as i64) as usize;
            frac[k] = (s - f).clamp(0.0, 1.0);
        }
        let mut st = Stencil {
            nodes: [0; MAX_STENCIL],
            weights: [0.0; MAX_STENCIL],
            len: 0,
        };
        let mut push = |node: usize, w: f64| {
            if w > 0.0 {
                st.nodes[st.len] = node as u32;
                st.weights[st.len] = w;
                st.len += 1;
            }
        };
        match self.dim {
            1 => {
                let hi = (lo[0] + 1) % self.n;
                push(lo[0], 1.0 - frac[0]);
                push(hi, frac[0]);
            }
            _ => {
                let hx = (lo[0] + 1) % self.n;
                let hy = (lo[1] + 1) % self.n;
                let (fx, fy) = (frac[0], frac[1]);
                push(lo[0] + self.n * lo[1], (1.0 - fx) * (1.0 - fy));
                push(hx + self.n * lo[1], fx * (1.0 - fy));
                push(lo[0] + self.n * hy, (1.0 - fx) * fy);
                push(hx + self.n * hy, fx * fy);
            }
        }
        if st.len == 0 {
            // only reachable through NaN input
            st.nodes[0] = 0;
            st.weights[0] = 1.0;
            st.len = 1;
        }
        st
    }

    pub fn interpolate(&self, values: &[f64], p: &Point) -> f64 {
        self.stencil(p).apply(values)
    }
}

/// Finite control set, symmetric under `v -> -v` and containing zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    dim: usize,
    per_axis: usize,
    v_max: f64,
    controls: Vec<Point>,
}

impl ControlGrid {
    /// Tensor grid of `per_axis` (odd) equispaced values in `[-v_max, v_max]` per axis.
    pub fn uniform(dim: usize, per_axis: usize, v_max: f64) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::Dimension(dim));
        }
        if per_axis < 3 || per_axis.is_multiple_of(2) {
            return Err(ModelError::Controls(format!(
                "controls per axis must be odd and at least 3, got {per_axis}"
            )));
        }
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(ModelError::Controls(format!(
                "v_max must be positive, got {v_max}"
            )));
        }
        let half = (per_axis / 2) as i64;
        let axis: Vec<f64> = (-half..=half)
            .map(|k| v_max * k as f64 / half as f64)
            .collect();
        let controls = match dim {
            1 => axis.iter().map(|&v| [v, 0.0]).collect(),
            _ => axis
                .iter()
                .flat_map(|&vy| axis.iter().map(move |&vx| [vx, vy]))
                .collect(),
        };
        Ok(Self {
            dim,
            per_axis,
            v_max,
            controls,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn get(&self, k: usize) -> Point {
        self.controls[k]
    }

    pub fn as_slice(&self) -> &[Point] {
        &self.controls
    }

    pub fn zero_index(&self) -> usize {
        self.controls.len() / 2
    }

    /// Index of `-v_k`.
    pub fn mirror(&self, k: usize) -> usize {
        self.controls.len() - 1 - k
    }

    /// True when some coordinate of the control sits at `±v_max`.
    pub fn on_boundary(&self, k: usize) -> bool {
        let a = self.per_axis;
        let (ix, iy) = (k % a, k / a);
        let edge = |i: usize| i == 0 || i == a - 1;
        match self.dim {
            1 => edge(k),
            _ => edge(ix) || edge(iy),
        }
    }

    pub fn norm(&self, k: usize) -> f64 {
        let v = self.controls[k];
        (v[0] * v[0] + v[1] * v[1]).sqrt()
    }
}

/// Values `w_i(x)` on grid nodes × modes, stored mode-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridVectorFunction {
    nodes: usize,
    modes: usize,
    values: Vec<f64>,
}

impl GridVectorFunction {
    pub fn zeros(nodes: usize, modes: usize) -> Self {
        Self::constant(nodes, modes, 0.0)
    }

    pub fn constant(nodes: usize, modes: usize, value: f64) -> Self {
        Self {
            nodes,
            modes,
            values: vec![value; nodes * modes],
        }
    }

    pub fn from_values(nodes: usize, modes: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != nodes * modes {
            return Err(ModelError::Shape {
                expected: nodes * modes,
                found: values.len(),
            });
        }
        Ok(Self {
            nodes,
            modes,
            values,
        })
    }

    pub fn from_fn(nodes: usize, modes: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(nodes * modes);
        for i in 0..modes {
            for x in 0..nodes {
                values.push(f(i, x));
            }
        }
        Self {
            nodes,
            modes,
            values,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    #[inline]
    pub fn get(&self, mode: usize, node: usize) -> f64 {
        self.values[mode * self.nodes + node]
    }

    #[inline]
    pub fn set(&mut self, mode: usize, node: usize, value: f64) {
        self.values[mode * self.nodes + node] = value;
    }

    pub fn component(&self, mode: usize) -> &[f64] {
        &self.values[mode * self.nodes..(mode + 1) * self.nodes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `‖self − other‖_∞`; panics on shape mismatch.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        assert_eq!(
            self.values.len(),
            other.values.len(),
            "grid function shape mismatch"
        );
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add_constant(&self, a: f64) -> Self {
        self.map(|v| v + a)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nodes: self.nodes,
            modes: self.modes,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest difference quotient between neighbouring nodes of one component.
    pub fn lipschitz_estimate(&self, grid: &TorusGrid) -> f64 {
        let n = grid.n();
        let dx = grid.spacing();
        let mut best = 0.0f64;
        for i in 0..self.modes {
            let c = self.component(i);
            for k in 0..grid.len() {
                let (ix, iy) = (k % n, k / n);
                let right = (ix + 1) % n + iy * n;
                best = best.max((c[right] - c[k]).abs() / dx);
                if grid.dim() == 2 {
                    let up = ix + ((iy + 1) % n) * n;
                    best = best.max((c[up] - c[k]).abs() / dx);
                }
            }
        }
        best
    }
}
