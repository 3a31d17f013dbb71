//! The Hamiltonian catalog and its Legendre transforms.
//!
//! Every catalog member is convex and superlinear in the momentum:
//!
//! ```text
//! quadratic        H(x,p) = ½|p|² − f(x)                 L(x,v) = ½|v|² + f(x)
//! quadratic-drift  H(x,p) = ½|p|² + ⟨b(x),p⟩ − f(x)      L(x,v) = ½|v − b(x)|² + f(x)
//! power            H(x,p) = |p|^q / q − f(x)             L(x,v) = |v|^{q'} / q' + f(x)
//! ```
//!
//! with `1/q + 1/q' = 1`. A generic numeric conjugate is kept alongside the
//! closed forms and is used to cross-check them.

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::grid::{Point, TorusGrid};
use super::ModelError;

/// A periodic scalar field, closed form or sampled on its own grid.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Expr(Expr),
    Samples { grid: TorusGrid, values: Vec<f64> },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Expr(Expr::constant(value))
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        Ok(ScalarField::Expr(Expr::parse(text)?))
    }

    pub fn samples(dim: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        let n = match dim {
            1 => values.len(),
            _ => (values.len() as f64).sqrt().round() as usize,
        };
        let grid = TorusGrid::new(dim, n)?;
        if grid.len() != values.len() {
            return Err(ModelError::Shape {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Field("non-finite sample".into()));
        }
        Ok(ScalarField::Samples { grid, values })
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            ScalarField::Expr(e) => e.eval(x),
            ScalarField::Samples { grid, values } => grid.interpolate(values, x),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ScalarField::Expr(e) => e.to_string(),
            ScalarField::Samples { grid, .. } => format!("samples[{}^{}]", grid.n(), grid.dim()),
        }
    }

    /// Checks periodicity and finiteness on a probe lattice and returns a
    /// finite-difference Lipschitz estimate.
    pub fn check_on_torus(&self, dim: usize) -> Result<f64, ModelError> {
        const PROBES: usize = 64;
        let step = 1.0 / PROBES as f64;
        let mut lip = 0.0f64;
        let lattice: Vec<Point> = match dim {
            1 => (0..PROBES).map(|k| [k as f64 * step, 0.0]).collect(),
            _ => (0..PROBES * PROBES)
                .map(|k| [(k % PROBES) as f64 * step, (k / PROBES) as f64 * step])
                .collect(),
        };
        for p in &lattice {
            let v = self.eval(p);
            if !v.is_finite() {
                return Err(ModelError::Field(format!(
                    "field {} is not finite at {:?}",
                    self.describe(),
                    &p[..dim]
                )));
            }
            for axis in 0..dim {
                let mut shifted = *p;
                shifted[axis] += 1.0;
                let scale = 1.0 + v.abs();
                if (self.eval(&shifted) - v).abs() > 1e-9 * scale {
                    return Err(ModelError::Field(format!(
                        "field {} is not 1-periodic along axis {}",
                        self.describe(),
                        axis + 1
                    )));
                }
                let mut next = *p;
                next[axis] += step;
                lip = lip.max((self.eval(&next) - v).abs() / step);
            }
        }
        Ok(lip)
    }

    /// Minimum and maximum over a probe lattice.
    pub fn range(&self, dim: usize) -> (f64, f64) {
        const PROBES: usize = 256;
        let step = 1.0 / PROBES as f64;
        let count = if dim == 1 { PROBES } else { PROBES * PROBES };
        (0..count)
            .map(|k| self.eval(&[(k % PROBES) as f64 * step, (k / PROBES) as f64 * step]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianKind {
    Quadratic,
    QuadraticDrift { drift: Vec<ScalarField> },
    Power { exponent: f64 },
}

impl HamiltonianKind {
    pub fn tag(&self) -> &'static str {
        match self {
            HamiltonianKind::Quadratic => "quadratic",
            HamiltonianKind::QuadraticDrift { .. } => "quadratic-drift",
            HamiltonianKind::Power { .. } => "power",
        }
    }
}

/// One catalog Hamiltonian `H_i` on the `dim`-torus.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    dim: usize,
    kind: HamiltonianKind,
    potential: ScalarField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendreValue {
    pub value: f64,
    pub maximizer: Point,
    pub radius: f64,
}

const MAX_SEARCH_RADIUS: f64 = 1e8;

impl HamiltonianSpec {
    pub fn new(
        dim: usize,
        kind: HamiltonianKind,
        potential: ScalarField,
    ) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::Dimension(dim));
        }
        match &kind {
            HamiltonianKind::Power { exponent } if !(exponent.is_finite() && *exponent > 1.0) => {
                return Err(ModelError::Field(format!(
                    "power exponent must exceed 1, got {exponent}"
                )));
            }
            HamiltonianKind::QuadraticDrift { drift } if drift.len() != dim => {
                return Err(ModelError::Field(format!(
                    "drift has {} components, expected {dim}",
                    drift.len()
                )));
            }
            _ => {}
        }
        Ok(Self {
            dim,
            kind,
            potential,
        })
    }

    pub fn quadratic(dim: usize, potential: ScalarField) -> Result<Self, ModelError> {
        Self::new(dim, HamiltonianKind::Quadratic, potential)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &HamiltonianKind {
        &self.kind
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    /// Validates potential and drift on the torus; returns the largest
    /// Lipschitz estimate found.
    pub fn check_fields(&self) -> Result<f64, ModelError> {
        let mut lip = self.potential.check_on_torus(self.dim)?;
        if let HamiltonianKind::QuadraticDrift { drift } = &self.kind {
            for b in drift {
                lip = lip.max(b.check_on_torus(self.dim)?);
            }
        }
        Ok(lip)
    }

    fn drift_at(&self, x: &Point) -> Point {
        match &self.kind {
            HamiltonianKind::QuadraticDrift { drift } => {
                let mut b = [0.0; 2];
                for (k, field) in drift.iter().enumerate() {
                    b[k] = field.eval(x);
                }
                b
            }
            _ => [0.0; 2],
        }
    }

    fn norm(&self, p: &Point) -> f64 {
        match self.dim {
            1 => p[0].abs(),
            _ => (p[0] * p[0] + p[1] * p[1]).sqrt(),
        }
    }

    fn dot(&self, a: &Point, b: &Point) -> f64 {
        (0..self.dim).map(|k| a[k] * b[k]).sum()
    }

    pub fn eval(&self, x: &Point, p: &Point) -> f64 {
        let f = self.potential.eval(x);
        match &self.kind {
            HamiltonianKind::Quadratic => 0.5 * self.dot(p, p) - f,
            HamiltonianKind::QuadraticDrift { .. } => {
                let b = self.drift_at(x);
                0.5 * self.dot(p, p) + self.dot(&b, p) - f
            }
            HamiltonianKind::Power { exponent } => self.norm(p).powf(*exponent) / exponent - f,
        }
    }

    /// Closed-form Lagrangian `L(x,v) = sup_p ⟨p,v⟩ − H(x,p)`.
    pub fn lagrangian(&self, x: &Point, v: &Point) -> f64 {
        let f = self.potential.eval(x);
        match &self.kind {
            HamiltonianKind::Quadratic => 0.5 * self.dot(v, v) + f,
            HamiltonianKind::QuadraticDrift { .. } => {
                let b = self.drift_at(x);
                let d = [v[0] - b[0], v[1] - b[1]];
                0.5 * self.dot(&d, &d) + f
            }
            HamiltonianKind::Power { exponent } => {
                let dual = exponent / (exponent - 1.0);
                self.norm(v).powf(dual) / dual + f
            }
        }
    }

    /// The maximizing momentum `∂_v L(x,v)` of the closed form.
    pub fn optimal_momentum(&self, x: &Point, v: &Point) -> Point {
        match &self.kind {
            HamiltonianKind::Quadratic => *v,
            HamiltonianKind::QuadraticDrift { .. } => {
                let b = self.drift_at(x);
                [v[0] - b[0], v[1] - b[1]]
            }
            HamiltonianKind::Power { exponent } => {
                let r = self.norm(v);
                if r == 0.0 {
                    return [0.0; 2];
                }
                let dual = exponent / (exponent - 1.0);
                let s = r.powf(dual - 2.0);
                [v[0] * s, v[1] * s]
            }
        }
    }

    /// Speed bound for optimal controls on a critical-level set
    /// `H(x,p) = c`, `|c| <= level`. Used to size control sets.
    pub fn speed_bound(&self, level: f64) -> f64 {
        let (lo, hi) = self.potential.range(self.dim);
        let energy = (hi - lo) + level.abs();
        match &self.kind {
            HamiltonianKind::Quadratic => (2.0 * energy).sqrt(),
            HamiltonianKind::QuadraticDrift { drift } => {
                let bmax = drift
                    .iter()
                    .map(|b| {
                        let (l, h) = b.range(self.dim);
                        l.abs().max(h.abs())
                    })
                    .fold(0.0, |acc, m| acc + m * m)
                    .sqrt();
                // |p| on the level set is at most bmax + sqrt(bmax² + 2 energy)
                let p = bmax + (bmax * bmax + 2.0 * energy).sqrt();
                p + bmax
            }
            HamiltonianKind::Power { exponent } => {
                let p = (exponent * energy).powf(1.0 / exponent);
                p.powf(exponent - 1.0)
            }
        }
    }

    /// Numeric conjugate by nested golden-section search over
    /// `|p_k| <= radius`; fails if the maximizer touches the search box.
    pub fn numeric_legendre_in(
        &self,
        x: &Point,
        v: &Point,
        radius: f64,
    ) -> Result<LegendreValue, ModelError> {
        let objective = |p: &Point| self.dot(p, v) - self.eval(x, p);
        let (best, value) = match self.dim {
            1 => {
                let (p0, val) = golden_max(|t| objective(&[t, 0.0]), -radius, radius);
                ([p0, 0.0], val)
            }
            _ => {
                let inner = |t: f64| golden_max(|s| objective(&[t, s]), -radius, radius);
                let (p0, val) = golden_max(|t| inner(t).1, -radius, radius);
                ([p0, inner(p0).0], val)
            }
        };
        let edge = radius * (1.0 - 1e-6);
        if (0..self.dim).any(|k| best[k].abs() >= edge) {
            return Err(ModelError::MaximizerOnBoundary { radius });
        }
        Ok(LegendreValue {
            value,
            maximizer: best,
            radius,
        })
    }

    /// Numeric conjugate with the radius started at `2(1+|v|)` and doubled
    /// until the maximizer is interior.
    pub fn numeric_legendre(&self, x: &Point, v: &Point) -> Result<LegendreValue, ModelError> {
        let mut radius = 2.0 * (1.0 + self.norm(v));
        loop {
            match self.numeric_legendre_in(x, v, radius) {
                Err(ModelError::MaximizerOnBoundary { .. }) if radius < MAX_SEARCH_RADIUS => {
                    radius *= 2.0
                }
                other => return other,
            }
        }
    }
}

/// Golden-section maximization of a concave function on `[lo, hi]`,
/// polished with the best of the bracket endpoints.
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(mid, f(mid)), (c, fc), (d, fd), (lo, f(lo)), (hi, f(hi))]
        .into_iter()
        .fold((mid, f64::NEG_INFINITY), |best, cand| {
            if cand.1 > best.1 {
                cand
            } else {
                best
            }
        })
}
