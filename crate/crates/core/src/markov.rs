//! The mode process: a continuous-time Markov chain with generator `−B`.
//!
//! Transition matrices are computed as `e^{−tB}` by scaling and squaring a
//! truncated Taylor series. Paths are stored as jump lists, so the càdlàg
//! mode `ω(t)` can be read at any time without a sampling grid.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{CouplingMatrix, GridVectorFunction, Point, TorusGrid};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("mode {mode} out of range for {modes} modes")]
    Mode { mode: usize, modes: usize },
    #[error("no paths supplied")]
    EmptyInput,
    #[error("paths disagree on {0}")]
    Inconsistent(&'static str),
    #[error("path horizon {horizon} is shorter than the requested time {t}")]
    HorizonTooShort { horizon: f64, t: f64 },
    #[error("grid function has {found} modes, expected {expected}")]
    Shape { expected: usize, found: usize },
}

/// `e^{−tB}` together with its time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    t: f64,
    matrix: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.matrix.row(i).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.matrix.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `e^{−tB}` by scaling and squaring with a Taylor series truncated once
/// terms drop below `1e−14`; negative round-off is clamped and rows are
/// renormalised.
pub fn transition_matrix(b: &CouplingMatrix, t: f64) -> Result<StochasticMatrix, MarkovError> {
    if !(t >= 0.0) {
        return Err(MarkovError::NegativeTime(t));
    }
    let m = b.modes();
    let a = -b.to_matrix() * t;
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = a * scale;
    let mut result = DMatrix::<f64>::identity(m, m);
    let mut term = DMatrix::<f64>::identity(m, m);
    for k in 1..64 {
        term = &term * &a / k as f64;
        result += &term;
        if term.amax() < 1e-14 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    for i in 0..m {
        for j in 0..m {
            if result[(i, j)] < 0.0 {
                result[(i, j)] = 0.0;
            }
        }
        let s = result.row(i).sum();
        for j in 0..m {
            result[(i, j)] /= s;
        }
    }
    Ok(StochasticMatrix { t, matrix: result })
}

/// A sampled càdlàg mode path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingPath {
    initial_mode: usize,
    /// `(τ_k, mode entered at τ_k)`, strictly increasing in time.
    jumps: Vec<(f64, usize)>,
    horizon: f64,
}

impl SwitchingPath {
    pub fn constant(mode: usize, horizon: f64) -> Self {
        Self {
            initial_mode: mode,
            jumps: Vec::new(),
            horizon,
        }
    }

    /// Builds a path from explicit jumps, checking the càdlàg invariants.
    pub fn from_jumps(
        initial_mode: usize,
        jumps: Vec<(f64, usize)>,
        horizon: f64,
    ) -> Result<Self, MarkovError> {
        if !(horizon > 0.0) {
            return Err(MarkovError::Horizon(horizon));
        }
        let mut prev_t = 0.0;
        let mut prev_mode = initial_mode;
        for &(t, mode) in &jumps {
            if !(t > prev_t) || t > horizon {
                return Err(MarkovError::Inconsistent("jump times"));
            }
            if mode == prev_mode {
                return Err(MarkovError::Inconsistent("consecutive modes"));
            }
            prev_t = t;
            prev_mode = mode;
        }
        Ok(Self {
            initial_mode,
            jumps,
            horizon,
        })
    }

    pub fn initial_mode(&self) -> usize {
        self.initial_mode
    }

    pub fn jumps(&self) -> &[(f64, usize)] {
        &self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Mode in force at the largest jump time `<= t`.
    pub fn mode_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(tau, _)| tau <= t);
        if k == 0 {
            self.initial_mode
        } else {
            self.jumps[k - 1].1
        }
    }

    /// Time spent in each mode over `[a, b)`.
    pub fn segments(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let first = self.jumps.partition_point(|&(tau, _)| tau <= a);
        let start_mode = self.mode_at(a);
        let inner = self.jumps[first..]
            .iter()
            .take_while(move |&&(tau, _)| tau < b);
        let mut cursor = (a, start_mode);
        inner
            .map(Some)
            .chain(std::iter::once(None))
            .map(move |next| {
                let (t0, mode) = cursor;
                match next {
                    Some(&(tau, m)) => {
                        cursor = (tau, m);
                        (t0, tau, mode)
                    }
                    None => (t0, b, mode),
                }
            })
            .filter(|(s, e, _)| e > s)
    }

    /// The same path observed only up to time `t`.
    pub fn truncated(&self, t: f64) -> Self {
        Self {
            initial_mode: self.initial_mode,
            jumps: self
                .jumps
                .iter()
                .copied()
                .filter(|&(tau, _)| tau <= t)
                .collect(),
            horizon: t.min(self.horizon),
        }
    }
}

/// JSON debugging record of one sampled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub seed: u64,
    pub index: u64,
    pub i0: usize,
    pub horizon: f64,
    pub jumps: Vec<(f64, usize)>,
}

impl PathRecord {
    pub fn new(seed: u64, index: u64, path: &SwitchingPath) -> Self {
        Self {
            seed,
            index,
            i0: path.initial_mode,
            horizon: path.horizon,
            jumps: path.jumps.clone(),
        }
    }
}

/// Independent generator for path `index` under `seed`: ChaCha with the
/// path index as stream id.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples the chain from `i0`: exponential holding times with rate
/// `b_ii`, then a jump to `j ≠ i` with probability `−b_ij / b_ii`.
pub fn sample_path<R: Rng + ?Sized>(
    b: &CouplingMatrix,
    i0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<SwitchingPath, MarkovError> {
    let m = b.modes();
    if i0 >= m {
        return Err(MarkovError::Mode { mode: i0, modes: m });
    }
    if !(horizon > 0.0) {
        return Err(MarkovError::Horizon(horizon));
    }
    let mut jumps = Vec::new();
    let mut mode = i0;
    let mut t = 0.0;
    loop {
        let rate = b.diagonal(mode);
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = Exp::new(rate).expect("positive rate").sample(rng);
        t += hold;
        if t > horizon {
            break;
        }
        let u: f64 = rng.random::<f64>() * rate;
        let targets = (0..m).filter(|&j| j != mode && b.get(mode, j) < 0.0);
        let mut acc = 0.0;
        let mut next = mode;
        for j in targets {
            acc -= b.get(mode, j);
            next = j;
            if u < acc {
                break;
            }
        }
        mode = next;
        jumps.push((t, mode));
    }
    Ok(SwitchingPath {
        initial_mode: i0,
        jumps,
        horizon,
    })
}

/// `count` paths, path `k` drawn from [`path_rng`]`(seed, k)`.
pub fn sample_paths(
    b: &CouplingMatrix,
    i0: usize,
    horizon: f64,
    seed: u64,
    count: usize,
) -> Result<Vec<SwitchingPath>, MarkovError> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| sample_path(b, i0, horizon, &mut path_rng(seed, k)))
        .collect()
}

/// Frequencies of `ω(t)` over the supplied paths.
pub fn empirical_marginal(
    paths: &[SwitchingPath],
    modes: usize,
    t: f64,
) -> Result<Vec<f64>, MarkovError> {
    let first = paths.first().ok_or(MarkovError::EmptyInput)?;
    let mut counts = vec![0usize; modes];
    for p in paths {
        if p.initial_mode != first.initial_mode {
            return Err(MarkovError::Inconsistent("initial mode"));
        }
        if p.horizon < t {
            return Err(MarkovError::HorizonTooShort {
                horizon: p.horizon,
                t,
            });
        }
        let mode = p.mode_at(t);
        if mode >= modes {
            return Err(MarkovError::Mode { mode, modes });
        }
        counts[mode] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / paths.len() as f64)
        .collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Control law of an admissible curve. The curve moves as `γ̇ = −v`, and
/// `v` may only depend on the current time, position and mode, which
/// makes the curve nonanticipating.
pub trait ControlRule: Sync {
    fn control(&self, t: f64, x: &Point, mode: usize) -> Point;
}

/// The curve that stays at its starting point.
#[derive(Debug, Clone, Copy, Default)]
pub struct RestControl;

impl ControlRule for RestControl {
    fn control(&self, _t: f64, _x: &Point, _mode: usize) -> Point {
        [0.0, 0.0]
    }
}

/// Positions `γ(k·dt)` for `k = 0..=steps` of the Euler curve driven by
/// `rule`, with the control frozen over each step.
pub fn follow_curve(
    grid: &TorusGrid,
    rule: &dyn ControlRule,
    path: &SwitchingPath,
    start: Point,
    dt: f64,
    steps: usize,
) -> Vec<Point> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = grid.wrap_point(start);
    out.push(x);
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = rule.control(t, &x, path.mode_at(t));
        x = grid.wrap_point([x[0] - dt * v[0], x[1] - dt * v[1]]);
        out.push(x);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynkinReport {
    /// `|mean of the per-path Dynkin defect|`.
    pub residual: f64,
    /// Monte Carlo standard error of that mean.
    pub sigma: f64,
    /// Bound on the midpoint-quadrature error of the `Bg` integral.
    pub quadrature_bound: f64,
    pub paths: usize,
}

impl DynkinReport {
    pub fn within_contract(&self) -> bool {
        self.residual <= 3.0 * self.sigma + self.quadrature_bound + 1e-12
    }
}

/// Monte Carlo check of Dynkin's formula for a time-independent `g`:
///
/// ```text
/// E[g_ω(t1)(γ(t1))] − E[g_ω(t0)(γ(t0))] = E ∫_{t0}^{t1} −(Bg)_ω(s)(γ(s)) + ⟨Dg_ω(s)(γ(s)), γ̇(s)⟩ ds
/// ```
///
/// Each path contributes the difference of both sides, where the transport
/// term is taken exactly (telescoped along linear pieces between step and
/// jump times) and the `Bg` integral by the midpoint rule.
#[allow(clippy::too_many_arguments)]
pub fn dynkin_residual(
    g: &GridVectorFunction,
    grid: &TorusGrid,
    b: &CouplingMatrix,
    rule: &dyn ControlRule,
    start: Point,
    paths: &[SwitchingPath],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<DynkinReport, MarkovError> {
    if paths.is_empty() {
        return Err(MarkovError::EmptyInput);
    }
    if g.modes() != b.modes() {
        return Err(MarkovError::Shape {
            expected: b.modes(),
            found: g.modes(),
        });
    }
    if let Some(p) = paths.iter().find(|p| p.horizon < t1) {
        return Err(MarkovError::HorizonTooShort {
            horizon: p.horizon,
            t: t1,
        });
    }
    let m = b.modes();
    // (Bg)_i(x) on grid nodes
    let bg = GridVectorFunction::from_fn(grid.len(), m, |i, x| {
        let col: Vec<f64> = (0..m).map(|j| g.get(j, x)).collect();
        b.apply(&col)[i]
    });
    let eval =
        |f: &GridVectorFunction, mode: usize, p: &Point| grid.interpolate(f.component(mode), p);
    let steps = (t1 / dt).ceil() as usize;
    let k0 = (t0 / dt).floor() as usize;
    let defects: Vec<(f64, f64)> = paths
        .par_iter()
        .map(|path| {
            let curve = follow_curve(grid, rule, path, start, dt, steps);
            let at = |t: f64| -> Point {
                let k = ((t / dt).floor() as usize).min(steps.saturating_sub(1));
                let s = ((t - k as f64 * dt) / dt).clamp(0.0, 1.0);
                let (a, c) = (curve[k], curve[k + 1]);
                // shortest displacement on the torus
                let mut d = [c[0] - a[0], c[1] - a[1]];
                for v in d.iter_mut() {
                    *v -= v.round();
                }
                grid.wrap_point([a[0] + s * d[0], a[1] + s * d[1]])
            };
            let (start_t, end_t) = (t0.max(k0 as f64 * dt), t1);
            let mut transport = 0.0;
            let mut generator = 0.0;
            let mut speed = 0.0f64;
            for k in k0..steps {
                let (a, c) = (
                    (k as f64 * dt).max(start_t),
                    ((k + 1) as f64 * dt).min(end_t),
                );
                if c <= a {
                    continue;
                }
                for (s0, s1, mode) in path.segments(a, c) {
                    let (x0, x1) = (at(s0), at(s1));
                    speed = speed.max(grid.distance(&x0, &x1) / (s1 - s0));
                    transport += eval(g, mode, &x1) - eval(g, mode, &x0);
                    generator += (s1 - s0) * eval(&bg, mode, &at(0.5 * (s0 + s1)));
                }
            }
            let lhs = eval(g, path.mode_at(end_t), &at(end_t))
                - eval(g, path.mode_at(start_t), &at(start_t));
            (lhs - transport + generator, speed)
        })
        .collect();
    let n = defects.len() as f64;
    let mean = defects.iter().map(|d| d.0).sum::<f64>() / n;
    let var = if defects.len() > 1 {
        defects.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let speed = defects.iter().map(|d| d.1).fold(0.0, f64::max);
    let quadrature_bound = bg.lipschitz_estimate(grid) * speed * dt * (t1 - t0) / 4.0;
    Ok(DynkinReport {
        residual: mean.abs(),
        sigma: (var / n).sqrt(),
        quadrature_bound,
        paths: defects.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> CouplingMatrix {
        CouplingMatrix::symmetric_pair(1.0).unwrap()
    }

    /// Independent series oracle: plain Taylor sum of e^{-tB} without scaling.
    fn series_oracle(b: &CouplingMatrix, t: f64) -> DMatrix<f64> {
        let m = b.modes();
        let a = -b.to_matrix() * t;
        let mut sum = DMatrix::<f64>::identity(m, m);
        let mut term = DMatrix::<f64>::identity(m, m);
        for k in 1..200 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        sum
    }

    /// Classical RK4 on P' = -P B, P(0) = I.
    fn ode_oracle(b: &CouplingMatrix, t: f64) -> DMatrix<f64> {
        let m = b.modes();
        let gen = -b.to_matrix();
        let steps = 20_000;
        let dt = t / steps as f64;
        let mut p = DMatrix::<f64>::identity(m, m);
        for _ in 0..steps {
            let k1 = &p * &gen;
            let k2 = (&p + &k1 * (dt / 2.0)) * &gen;
            let k3 = (&p + &k2 * (dt / 2.0)) * &gen;
            let k4 = (&p + &k3 * dt) * &gen;
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        p
    }

    #[test]
    fn identity_at_zero() {
        let p = transition_matrix(&pair(), 0.0).unwrap();
        assert_eq!(p.as_matrix(), &DMatrix::<f64>::identity(2, 2));
        assert!(transition_matrix(&pair(), -1.0).is_err());
    }

    #[test]
    fn symmetric_pair_closed_form() {
        let p = transition_matrix(&pair(), 1.0).unwrap();
        let e = (-2.0f64).exp();
        let expected = [
            [0.5 * (1.0 + e), 0.5 * (1.0 - e)],
            [0.5 * (1.0 - e), 0.5 * (1.0 + e)],
        ];
        let oracle = series_oracle(&pair(), 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.get(i, j) - expected[i][j]).abs() < 1e-13);
                assert!((oracle[(i, j)] - expected[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scalar_chain_is_frozen() {
        let p = transition_matrix(&CouplingMatrix::scalar(), 37.0).unwrap();
        assert_eq!(p.get(0, 0), 1.0);
        let mut rng = path_rng(1, 0);
        let path = sample_path(&CouplingMatrix::scalar(), 0, 100.0, &mut rng).unwrap();
        assert_eq!(path.jump_count(), 0);
    }

    #[test]
    fn three_mode_against_ode() {
        let b = CouplingMatrix::validate(&[
            vec![2.0, -1.5, -0.5],
            vec![-0.2, 0.2, 0.0],
            vec![-3.0, -1.0, 4.0],
        ])
        .unwrap();
        for &t in &[0.01, 0.3, 2.0, 9.0] {
            let p = transition_matrix(&b, t).unwrap();
            let o = ode_oracle(&b, t);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((p.get(i, j) - o[(i, j)]).abs() < 1e-10, "t={t}");
                }
            }
            assert!(p.max_row_sum_error() < 1e-12);
            assert!(p.min_entry() >= 0.0);
        }
    }

    #[test]
    fn cadlag_evaluation() {
        let path = SwitchingPath::from_jumps(0, vec![(0.5, 1), (1.25, 0)], 2.0).unwrap();
        assert_eq!(path.mode_at(0.0), 0);
        assert_eq!(path.mode_at(0.4999), 0);
        assert_eq!(path.mode_at(0.5), 1);
        assert_eq!(path.mode_at(1.25), 0);
        let segs: Vec<_> = path.segments(0.25, 1.5).collect();
        assert_eq!(segs, vec![(0.25, 0.5, 0), (0.5, 1.25, 1), (1.25, 1.5, 0)]);
        assert!(SwitchingPath::from_jumps(0, vec![(0.5, 1), (0.5, 0)], 2.0).is_err());
        assert!(SwitchingPath::from_jumps(0, vec![(0.5, 0)], 2.0).is_err());
        assert_eq!(path.truncated(1.0).jumps(), &[(0.5, 1)]);
    }

    #[test]
    fn sampled_paths_are_reproducible() {
        let b = pair();
        let a = sample_paths(&b, 0, 5.0, 42, 50).unwrap();
        let c = sample_paths(&b, 0, 5.0, 42, 50).unwrap();
        assert_eq!(a, c);
        let d = sample_paths(&b, 0, 5.0, 43, 50).unwrap();
        assert_ne!(a, d);
        for p in &a {
            let mut prev = (0.0, p.initial_mode());
            for &(t, mode) in p.jumps() {
                assert!(t > prev.0 && mode != prev.1 && t <= 5.0);
                prev = (t, mode);
            }
        }
        let rec = PathRecord::new(42, 0, &a[0]);
        let json = serde_json::to_string(&rec).unwrap();
        let back: PathRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn mean_jump_count_matches_poisson_rate() {
        let b = pair();
        let horizon = 3.0;
        let n = 100_000;
        let paths = sample_paths(&b, 0, horizon, 7, n).unwrap();
        let counts: Vec<f64> = paths.iter().map(|p| p.jump_count() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        // Poisson(T): variance T
        let sigma = (horizon / n as f64).sqrt();
        assert!((mean - horizon).abs() <= 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn mean_first_holding_time() {
        let b = CouplingMatrix::validate(&[vec![2.0, -2.0], vec![-1.0, 1.0]]).unwrap();
        let n = 100_000;
        let holds: Vec<f64> = (0..n as u64)
            .map(|k| {
                let p = sample_path(&b, 0, 40.0, &mut path_rng(11, k)).unwrap();
                p.jumps()[0].0
            })
            .collect();
        let mean = holds.iter().sum::<f64>() / n as f64;
        // Exp(2): sd 1/2
        assert!(
            (mean - 0.5).abs() <= 3.0 * 0.5 / (n as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn jump_targets_follow_rates() {
        let b = CouplingMatrix::validate(&[
            vec![3.0, -1.0, -2.0],
            vec![-1.0, 1.0, 0.0],
            vec![-1.0, 0.0, 1.0],
        ])
        .unwrap();
        let n = 60_000;
        let mut to_two = 0usize;
        for k in 0..n as u64 {
            let p = sample_path(&b, 0, 40.0, &mut path_rng(5, k)).unwrap();
            if p.jumps()[0].1 == 2 {
                to_two += 1;
            }
            // from modes 1 and 2 the only exit is mode 0
            if p.jumps().len() > 1 {
                assert_eq!(p.jumps()[1].1, 0);
            }
        }
        let frac = to_two as f64 / n as f64;
        let sd = (2.0 / 9.0 / n as f64).sqrt();
        assert!((frac - 2.0 / 3.0).abs() <= 4.0 * sd, "frac {frac}");
    }

    #[test]
    fn marginals() {
        let b = pair();
        let paths = sample_paths(&b, 0, 2.0, 3, 1000).unwrap();
        assert_eq!(empirical_marginal(&paths, 2, 0.0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            empirical_marginal(&[], 2, 0.0),
            Err(MarkovError::EmptyInput)
        ));
        assert!(empirical_marginal(&paths, 2, 3.0).is_err());
        let scalar = sample_paths(&CouplingMatrix::scalar(), 0, 1.0, 3, 10).unwrap();
        assert_eq!(empirical_marginal(&scalar, 1, 1.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn dynkin_constant_function_is_exact() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let b = pair();
        let g = GridVectorFunction::constant(8, 2, 2.5);
        let paths = sample_paths(&b, 0, 2.0, 9, 2000).unwrap();
        let r = dynkin_residual(
            &g,
            &grid,
            &b,
            &RestControl,
            [0.3, 0.0],
            &paths,
            0.0,
            2.0,
            0.01,
        )
        .unwrap();
        assert!(r.residual < 1e-12);
        let short = sample_paths(&b, 0, 1.0, 9, 10).unwrap();
        assert!(dynkin_residual(
            &g,
            &grid,
            &b,
            &RestControl,
            [0.3, 0.0],
            &short,
            0.0,
            2.0,
            0.01
        )
        .is_err());
    }

    struct Drift(f64);
    impl ControlRule for Drift {
        fn control(&self, _t: f64, x: &Point, _mode: usize) -> Point {
            [
                self.0 * (1.0 + (2.0 * std::f64::consts::PI * x[0]).sin()),
                0.0,
            ]
        }
    }

    #[test]
    fn dynkin_scalar_reduces_to_calculus() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let b = CouplingMatrix::scalar();
        let g = GridVectorFunction::from_fn(32, 1, |_, x| {
            (2.0 * std::f64::consts::PI * x as f64 / 32.0).cos()
        });
        let paths = sample_paths(&b, 0, 1.0, 0, 3).unwrap();
        let r = dynkin_residual(
            &g,
            &grid,
            &b,
            &Drift(0.8),
            [0.1, 0.0],
            &paths,
            0.0,
            1.0,
            1e-3,
        )
        .unwrap();
        assert!(r.residual < 1e-12, "{r:?}");
    }

    #[test]
    fn dynkin_two_mode_constants() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let b = pair();
        let g = GridVectorFunction::from_fn(8, 2, |i, _| if i == 0 { 1.0 } else { -2.0 });
        let paths = sample_paths(&b, 0, 1.5, 21, 10_000).unwrap();
        let r = dynkin_residual(
            &g,
            &grid,
            &b,
            &RestControl,
            [0.5, 0.0],
            &paths,
            0.25,
            1.5,
            0.01,
        )
        .unwrap();
        assert!(r.residual <= 3.0 * r.sigma, "{r:?}");
        assert_eq!(r.quadrature_bound, 0.0);
    }

    #[test]
    fn curves_do_not_anticipate() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let b = pair();
        struct ModeDependent;
        impl ControlRule for ModeDependent {
            fn control(&self, _t: f64, _x: &Point, mode: usize) -> Point {
                [if mode == 0 { 0.7 } else { -1.3 }, 0.0]
            }
        }
        let dt = 0.01;
        for path in sample_paths(&b, 0, 4.0, 77, 20).unwrap() {
            let full = follow_curve(&grid, &ModeDependent, &path, [0.2, 0.0], dt, 400);
            let t = 2.0;
            let cut = follow_curve(
                &grid,
                &ModeDependent,
                &path.truncated(t),
                [0.2, 0.0],
                dt,
                200,
            );
            assert_eq!(&full[..=200], &cut[..]);
        }
    }
}
