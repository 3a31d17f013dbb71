//! Acceptance suite: nine criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed by
//! `cargo test`. Numeric arguments select criteria: `cargo test --test
//! acceptance -- 3 7`.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use hj_switch::markov::{
    dynkin_residual, empirical_marginal, sample_paths, total_variation, transition_matrix,
    RestControl,
};
use hj_switch::mather::{build_lp, solve_lp, FaceOptions, MatherSolution};
use hj_switch::model::{
    ControlGrid, CouplingMatrix, GridVectorFunction, HamiltonianKind, HamiltonianSpec, ProblemSpec,
    ScalarField, TorusGrid,
};
use hj_switch::montecarlo::{
    exact_occupation, mass_near, simulate_discounted_cost, synthesize_feedback, SimulationSpec,
};
use hj_switch::selection::{
    convergence_study, lower_bound_check, run_selection, SelectionOutcome, StudyRow,
};
use hj_switch::solver::{
    build_scheme, estimate_critical_value, normalized_limit, solve_discounted_with,
    DiscountedSolution, DiscreteScheme, SolveOptions,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: &str = "1 - cos(2*pi*x)";
const TOL: f64 = 1e-9;
const LP_TOL: f64 = 1e-10;

fn f_oracle(x: f64) -> f64 {
    1.0 - (2.0 * PI * x).cos()
}

fn scalar_scheme(n: usize, controls: usize) -> DiscreteScheme {
    let p = ProblemSpec::scalar_quadratic(1, F).unwrap();
    DiscreteScheme::with_defaults(p, n, controls, 0.0).unwrap()
}

fn lift_scheme(n: usize, controls: usize) -> DiscreteScheme {
    let h = HamiltonianSpec::quadratic(1, ScalarField::parse(F).unwrap()).unwrap();
    let p = ProblemSpec::new(
        vec![h.clone(), h],
        CouplingMatrix::symmetric_pair(1.0).unwrap(),
    )
    .unwrap();
    DiscreteScheme::with_defaults(p, n, controls, 0.0).unwrap()
}

/// Composite Simpson rule.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let k = intervals + intervals % 2;
    let h = (b - a) / k as f64;
    let inner: f64 = (1..k)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// One scenario of the vanishing-discount study, computed once and shared.
struct Study {
    scheme: DiscreteScheme,
    selection: SelectionOutcome,
    rows: Vec<StudyRow>,
    solutions: Vec<DiscountedSolution>,
}

const STUDY_LAMBDAS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

fn study(scheme: DiscreteScheme) -> Study {
    let selection = run_selection(&scheme, &FaceOptions::default(), LP_TOL).unwrap();
    let probe = scheme.grid().nearest_node(&[0.5, 0.0]);
    let (report, solutions) = convergence_study(
        &scheme,
        selection.lp.critical_value,
        &selection.u0,
        &STUDY_LAMBDAS,
        &[probe],
        &SolveOptions::default(),
    )
    .unwrap();
    Study {
        scheme,
        selection,
        rows: report.rows,
        solutions,
    }
}

#[derive(Default)]
struct Shared {
    scalar: Option<Study>,
    lift: Option<Study>,
}

impl Shared {
    fn scalar(&mut self) -> &Study {
        self.scalar
            .get_or_insert_with(|| study(scalar_scheme(128, 65)))
    }

    fn both(&mut self) -> [(&'static str, &Study); 2] {
        self.scalar();
        self.lift.get_or_insert_with(|| study(lift_scheme(128, 65)));
        [
            ("scalar", self.scalar.as_ref().unwrap()),
            ("lift", self.lift.as_ref().unwrap()),
        ]
    }
}

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn critical_value_scalar(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let s = scalar_scheme(128, 65);
    let est = estimate_critical_value(&s, &[0.2, 0.1, 0.05], &SolveOptions::default()).unwrap();
    let lp = build_lp(&s).unwrap();
    let sol = solve_lp(&s, &lp, LP_TOL).unwrap();
    let secs = start.elapsed().as_secs_f64();
    // c = −min f, minimum located by dense sampling
    let oracle = -(0..=100_000)
        .map(|k| f_oracle(k as f64 / 100_000.0))
        .fold(f64::INFINITY, f64::min);
    let passed = (est.value - oracle).abs() <= 2e-2
        && (sol.critical_value - oracle).abs() <= 2e-2
        && sol.duality_gap <= 1e-8
        && secs <= 30.0;
    verdict(
        passed,
        format!(
            "oracle {oracle:.3e}, estimate {:.3e}, LP {:.3e}, gap {:.1e}, {secs:.1}s",
            est.value, sol.critical_value, sol.duality_gap
        ),
    )
}

/// Two quadratic modes with random trigonometric potentials and rates.
fn random_two_mode(seed: u64, n: usize) -> DiscreteScheme {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for _ in 0..2 {
        let mut expr = format!("{:.6}", rng.random_range(0.0..1.0));
        for k in 1..=3 {
            let (a, b): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let k_f = k as f64;
            expr.push_str(&format!(
                " + {:.6}*cos({k}*2*pi*x) + {:.6}*sin({k}*2*pi*x)",
                a / k_f,
                b / k_f
            ));
        }
        modes.push(HamiltonianSpec::quadratic(1, ScalarField::parse(&expr).unwrap()).unwrap());
    }
    let (r12, r21): (f64, f64) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
    let b = CouplingMatrix::validate(&[vec![r12, -r12], vec![-r21, r21]]).unwrap();
    let p = ProblemSpec::new(modes, b).unwrap();
    DiscreteScheme::with_defaults(p, n, 33, 0.0).unwrap()
}

fn cross_estimator(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let s = random_two_mode(20_240_617, 32);
    let est = estimate_critical_value(&s, &[0.2, 0.1, 0.05], &SolveOptions::default()).unwrap();
    let lp = build_lp(&s).unwrap();
    let sol = solve_lp(&s, &lp, LP_TOL).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gap = (est.value - sol.critical_value).abs();
    verdict(
        gap <= 3e-2 && secs <= 60.0,
        format!(
            "estimate {:.6}, LP {:.6}, |difference| {gap:.2e}, {secs:.1}s",
            est.value, sol.critical_value
        ),
    )
}

fn vanishing_discount(shared: &mut Shared) -> Verdict {
    // u⁰(½) is the shorter of the two arcs from the minimiser x = 0
    let speed = |x: f64| (2.0 * f_oracle(x)).sqrt();
    let oracle = simpson(speed, 0.0, 0.5, 20_000).min(simpson(speed, 0.5, 1.0, 20_000));
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, st) in shared.both() {
        let d: Vec<f64> = st.rows.iter().map(|r| r.distance).collect();
        let monotone = d.windows(2).all(|p| p[1] <= 1.1 * p[0]);
        let last = *d.last().unwrap();
        let half = st.scheme.grid().nearest_node(&[0.5, 0.0]);
        let u_half = (0..st.scheme.modes())
            .map(|i| (st.selection.u0.get(i, half) - oracle).abs())
            .fold(0.0, f64::max);
        passed &= monotone && last <= 5e-2 && u_half <= 3e-2;
        parts.push(format!(
            "{label}: distances [{}], |u0(1/2) - {oracle:.4}| = {u_half:.2e}",
            d.iter()
                .map(|v| format!("{v:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    verdict(passed, parts.join("; "))
}

fn rescaled_limits(shared: &mut Shared) -> Verdict {
    let st = shared.scalar();
    let s = &st.scheme;
    let c_h = st.selection.lp.critical_value;
    let opts = SolveOptions::default();
    let mut fitted: f64 = 0.0;
    for c in [0.0, 1.0] {
        let mut prev: Option<GridVectorFunction> = None;
        for &lambda in &STUDY_LAMBDAS {
            let sol = solve_discounted_with(s, lambda, c, &opts, prev.as_ref()).unwrap();
            let rate = s.effective_rate(lambda);
            let dev = sol
                .u
                .values()
                .iter()
                .map(|u| (rate * u - (c - c_h)).abs())
                .fold(0.0, f64::max);
            fitted = fitted.max(dev / lambda);
            prev = Some(sol.u);
        }
    }
    let lambda = *STUDY_LAMBDAS.last().unwrap();
    let a = normalized_limit(s, lambda, 0.0, TOL).unwrap();
    let b = normalized_limit(s, lambda, 1.0, TOL).unwrap();
    let gap = a.sup_distance(&b);
    verdict(
        fitted <= 5.0 && gap <= 2.0 * TOL,
        format!(
            "fitted C = {fitted:.3}, normalized limits differ by {gap:.2e} (bound {:.0e})",
            2.0 * TOL
        ),
    )
}

/// Random small scheme with up to two modes and generic potentials.
#[derive(Debug, Clone)]
struct Case {
    n: usize,
    controls: usize,
    coeffs: Vec<[f64; 3]>,
    rate: f64,
    lambda: f64,
    w1: Vec<f64>,
    w2: Vec<f64>,
    shift: f64,
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (
        8usize..=12,
        prop_oneof![Just(5usize), Just(7), Just(9)],
        1usize..=2,
    )
        .prop_flat_map(|(n, controls, modes)| {
            let len = n * modes;
            (
                Just(n),
                Just(controls),
                prop::collection::vec([0.0..1.5f64, -0.5..0.5f64, -0.5..0.5f64], modes),
                0.1..3.0f64,
                0.3..3.0f64,
                prop::collection::vec(-2.0..2.0f64, len),
                prop::collection::vec(-2.0..2.0f64, len),
                -5.0..5.0f64,
            )
        })
        .prop_map(|(n, controls, coeffs, rate, lambda, w1, w2, shift)| Case {
            n,
            controls,
            coeffs,
            rate,
            lambda,
            w1,
            w2,
            shift,
        })
}

fn case_scheme(c: &Case) -> DiscreteScheme {
    let hams: Vec<HamiltonianSpec> = c
        .coeffs
        .iter()
        .map(|k| {
            let e = format!("{} + {}*cos(2*pi*x) + {}*sin(4*pi*x)", k[0], k[1], k[2]);
            HamiltonianSpec::quadratic(1, ScalarField::parse(&e).unwrap()).unwrap()
        })
        .collect();
    let b = if hams.len() == 1 {
        CouplingMatrix::scalar()
    } else {
        CouplingMatrix::validate(&[vec![c.rate, -c.rate], vec![-0.5 * c.rate, 0.5 * c.rate]])
            .unwrap()
    };
    let p = ProblemSpec::new(hams, b).unwrap();
    let grid = TorusGrid::new(1, c.n).unwrap();
    let controls = ControlGrid::uniform(1, c.controls, 2.0).unwrap();
    let h = grid.spacing();
    build_scheme(p, grid, controls, h).unwrap()
}

fn gvf(s: &DiscreteScheme, v: &[f64]) -> GridVectorFunction {
    GridVectorFunction::from_values(s.nodes(), s.modes(), v.to_vec()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> (bool, String) {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    match runner.run(&strategy, test) {
        Ok(()) => (true, format!("{name} ok")),
        Err(e) => (false, format!("{name} FAILED: {e}")),
    }
}

fn random_generator() -> impl Strategy<Value = CouplingMatrix> {
    (2usize..=4)
        .prop_flat_map(|m| prop::collection::vec(0.05..3.0f64, m * m).prop_map(move |r| (m, r)))
        .prop_map(|(m, r)| {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let off: f64 = (0..m).filter(|&j| j != i).map(|j| r[i * m + j]).sum();
                    (0..m)
                        .map(|j| if i == j { off } else { -r[i * m + j] })
                        .collect()
                })
                .collect();
            CouplingMatrix::validate(&rows).unwrap()
        })
}

fn property_suite(shared: &mut Shared) -> Verdict {
    let opts = SolveOptions {
        tol: 1e-11,
        check_boundary: false,
        ..SolveOptions::default()
    };
    let mut results = Vec::new();

    results.push(run_property("monotonicity", case_strategy(), |c| {
        let s = case_scheme(&c);
        let lo: Vec<f64> = c.w1.iter().zip(&c.w2).map(|(a, b)| a.min(*b)).collect();
        let t_lo = s
            .apply_operator(&gvf(&s, &lo), c.lambda, c.shift)
            .unwrap()
            .value;
        let t_hi = s
            .apply_operator(&gvf(&s, &c.w1), c.lambda, c.shift)
            .unwrap()
            .value;
        ensure(
            t_lo.values()
                .iter()
                .zip(t_hi.values())
                .all(|(a, b)| *a <= b + 1e-12),
            || "T not monotone".into(),
        )
    }));

    results.push(run_property("contraction", case_strategy(), |c| {
        let s = case_scheme(&c);
        let (a, b) = (gvf(&s, &c.w1), gvf(&s, &c.w2));
        let ta = s.apply_operator(&a, c.lambda, 0.0).unwrap().value;
        let tb = s.apply_operator(&b, c.lambda, 0.0).unwrap().value;
        let beta = (-c.lambda * s.h()).exp();
        ensure(
            ta.sup_distance(&tb) <= beta * a.sup_distance(&b) + 1e-12,
            || "not a contraction".into(),
        )
    }));

    results.push(run_property(
        "constant compatibility",
        case_strategy(),
        |c| {
            let s = case_scheme(&c);
            let w = gvf(&s, &c.w1);
            let beta = (-c.lambda * s.h()).exp();
            let t = s.apply_operator(&w, c.lambda, 0.0).unwrap().value;
            let ts = s
                .apply_operator(&w.add_constant(c.shift), c.lambda, 0.0)
                .unwrap()
                .value;
            let dev = t
                .values()
                .iter()
                .zip(ts.values())
                .map(|(a, b)| (b - a - beta * c.shift).abs())
                .fold(0.0, f64::max);
            ensure(dev <= 1e-12, || format!("T(w + a) - T w - βa = {dev:e}"))
        },
    ));

    results.push(run_property("comparison principle", case_strategy(), |c| {
        let s = case_scheme(&c);
        let beta = (-c.lambda * s.h()).exp();
        let w = gvf(&s, &c.w1);
        let tw = s.apply_operator(&w, c.lambda, c.shift).unwrap().value;
        // shifting w by its worst defect turns it into a sub- and a supersolution
        let (mut up, mut down) = (0.0f64, 0.0f64);
        for (a, b) in w.values().iter().zip(tw.values()) {
            up = up.max(a - b);
            down = down.max(b - a);
        }
        let sub = w.add_constant(-up / (1.0 - beta));
        let sup = w.add_constant(down / (1.0 - beta));
        let u = solve_discounted_with(&s, c.lambda, c.shift, &opts, None)
            .unwrap()
            .u;
        let ok = (0..u.values().len()).all(|k| {
            sub.values()[k] <= u.values()[k] + 1e-9 && u.values()[k] <= sup.values()[k] + 1e-9
        });
        ensure(ok, || {
            "solution escapes the sub/supersolution bracket".into()
        })
    }));

    let fenchel = (
        0usize..3,
        -1.0..1.0f64,
        -1.0..1.0f64,
        1.2..4.0f64,
        0.0..1.0f64,
        -6.0..6.0f64,
        -6.0..6.0f64,
    );
    results.push(run_property(
        "Fenchel inequality",
        fenchel,
        |(kind, a, b, q, x, p, v)| {
            let kind = match kind {
                0 => HamiltonianKind::Quadratic,
                1 => HamiltonianKind::QuadraticDrift {
                    drift: vec![ScalarField::parse(&format!("{b}*sin(2*pi*x)")).unwrap()],
                },
                _ => HamiltonianKind::Power { exponent: q },
            };
            let pot = ScalarField::parse(&format!("{a}*cos(2*pi*x)")).unwrap();
            let h = HamiltonianSpec::new(1, kind, pot).unwrap();
            let gap = h.eval(&[x, 0.0], &[p, 0.0]) + h.lagrangian(&[x, 0.0], &[v, 0.0]) - p * v;
            ensure(gap >= -1e-9, || format!("H + L - pv = {gap:e}"))
        },
    ));

    results.push(run_property(
        "stochasticity and semigroup",
        (random_generator(), 0.0..3.0f64, 0.0..3.0f64),
        |(b, t, r)| {
            let pt = transition_matrix(&b, t).unwrap();
            let pr = transition_matrix(&b, r).unwrap();
            let ptr = transition_matrix(&b, t + r).unwrap();
            let prod = pt.as_matrix() * pr.as_matrix();
            let semigroup = (ptr.as_matrix() - prod).abs().max();
            ensure(
                pt.min_entry() >= -1e-14 && pt.max_row_sum_error() <= 1e-12 && semigroup <= 1e-12,
                || format!("semigroup defect {semigroup:e}"),
            )
        },
    ));

    results.push(run_property(
        "B1 = 0",
        (random_generator(), -10.0..10.0f64),
        |(b, a)| {
            let ones = vec![a; b.modes()];
            ensure(b.apply(&ones).iter().all(|v| *v == 0.0), || {
                "B maps a constant to nonzero".into()
            })
        },
    ));

    results.push(run_property("shift identity", case_strategy(), |c| {
        let s = case_scheme(&c);
        let tol = 1e-10;
        let o = SolveOptions { tol, ..opts };
        let solve = |shift: f64| {
            solve_discounted_with(&s, c.lambda, shift, &o, None)
                .map(|r| r.u)
                .map_err(|e| TestCaseError::fail(e.to_string()))
        };
        let (u, v) = (solve(0.0)?, solve(c.shift)?);
        let offset = -c.shift / s.effective_rate(c.lambda);
        let dev = u
            .values()
            .iter()
            .zip(v.values())
            .map(|(a, b)| (a - b - offset).abs())
            .fold(0.0, f64::max);
        ensure(dev <= 2.0 * tol, || {
            format!("shift identity off by {dev:e}")
        })
    }));

    // u^λ ≤ u⁰ + 5e-2 at every node, mode and rate of the vanishing-discount study
    let mut checked = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for (_, st) in shared.both() {
        for sol in &st.solutions {
            for (a, b) in sol.u.values().iter().zip(st.selection.u0.values()) {
                worst = worst.max(a - b);
                checked += 1;
            }
        }
    }
    let ok = worst <= 5e-2;
    results.push((
        ok,
        format!("u^λ <= u0 + 5e-2 over {checked} points (max excess {worst:.2e})"),
    ));

    let passed = results.iter().all(|r| r.0);
    let detail = results
        .into_iter()
        .map(|r| r.1)
        .collect::<Vec<_>>()
        .join("; ");
    verdict(passed, detail)
}

fn monte_carlo(shared: &mut Shared) -> Verdict {
    let st = shared.scalar();
    let s = &st.scheme;
    let start = Instant::now();
    let lambda = 0.2;
    let sol = solve_discounted_with(s, lambda, 0.0, &SolveOptions::default(), None).unwrap();
    let policy = synthesize_feedback(s, &sol.u, lambda, 0.0).unwrap();
    let spec = SimulationSpec {
        start: [0.5, 0.0],
        mode: 0,
        lambda,
        c: 0.0,
        paths: 10_000,
        horizon: SimulationSpec::default_horizon(lambda),
        seed: 20_240_617,
    };
    let est = simulate_discounted_cost(s, &policy, &spec).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let grid_value = s.grid().interpolate(sol.u.component(0), &[0.5, 0.0]);
    let diff = (est.estimate - grid_value).abs();
    let bound = 3.0 * est.stderr + 5e-2;
    verdict(
        diff <= bound && secs <= 30.0,
        format!(
            "MC {:.5} (stderr {:.1e}, tail {:.1e}) vs grid {grid_value:.5}: |diff| {diff:.2e} <= {bound:.2e}, {secs:.1}s",
            est.estimate, est.stderr, est.tail_bound
        ),
    )
}

fn occupation_limit(shared: &mut Shared) -> Verdict {
    let st = shared.scalar();
    let s = &st.scheme;
    let closedness: Vec<f64> = st.rows.iter().take(3).map(|r| r.closedness).collect();
    let decreasing = closedness.windows(2).all(|p| p[1] < p[0]);
    let sol = &st.solutions[2];
    assert_eq!(sol.lambda, 0.1);
    let policy = synthesize_feedback(s, &sol.u, sol.lambda, sol.c).unwrap();
    let y = s.grid().nearest_node(&[0.5, 0.0]);
    let mu = exact_occupation(s, &policy, y, 0, sol.lambda).unwrap();
    let dx = s.grid().spacing();
    let mass = mass_near(s, &mu, [0.0, 0.0], [0.0, 0.0], 3.0 * dx);
    verdict(
        decreasing && mass >= 0.8,
        format!(
            "closedness [{}], mass near (0, 0) at λ = 0.1: {mass:.4}",
            closedness
                .iter()
                .map(|v| format!("{v:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn lower_bound(_: &mut Shared) -> Verdict {
    let s = scalar_scheme(64, 33);
    let sel = run_selection(&s, &FaceOptions::default(), LP_TOL).unwrap();
    let MatherSolution {
        critical_value: c_h,
        subsolution,
        ..
    } = sel.lp.clone();
    let lambda = 0.1;
    let sol = solve_discounted_with(&s, lambda, c_h, &SolveOptions::default(), None).unwrap();
    let policy = synthesize_feedback(&s, &sol.u, lambda, c_h).unwrap();
    let mut worst = [f64::INFINITY; 2];
    for y in 0..s.nodes() {
        let mu = exact_occupation(&s, &policy, y, 0, lambda).unwrap();
        for (slot, w) in worst.iter_mut().zip([&subsolution, &sel.u0]) {
            let gap = lower_bound_check(&s, c_h, &sol.u, w, y, 0, &mu, 1e-8).unwrap();
            *slot = slot.min(gap);
        }
    }
    verdict(
        worst.iter().all(|g| *g >= -1e-3),
        format!(
            "min over {} starts: dual subsolution {:.3e}, u0 {:.3e}",
            s.nodes(),
            worst[0],
            worst[1]
        ),
    )
}

fn markov_marginals(_: &mut Shared) -> Verdict {
    let b = CouplingMatrix::validate(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let paths = sample_paths(&b, 0, 1.0, 20_240_617, 100_000).unwrap();
    let emp = empirical_marginal(&paths, 2, 1.0).unwrap();
    // symmetric two-state chain: P(stay) = (1 + e^{-2t}) / 2
    let stay = 0.5 * (1.0 + (-2.0f64).exp());
    let oracle = [stay, 1.0 - stay];
    let tv = total_variation(&emp, &oracle);
    let tv_bound = 3.0 * (1.0 / (4.0 * 1e5f64)).sqrt();
    let expm = transition_matrix(&b, 1.0).unwrap();
    let expm_err = (expm.get(0, 0) - stay)
        .abs()
        .max((expm.get(0, 1) - oracle[1]).abs());

    let grid = TorusGrid::new(1, 64).unwrap();
    let g = GridVectorFunction::from_fn(64, 2, |i, x| {
        let p = grid.node(x);
        (i as f64 + 1.0) * (2.0 * PI * p[0]).cos() + i as f64
    });
    let rep = dynkin_residual(
        &g,
        &grid,
        &b,
        &RestControl,
        [0.3, 0.0],
        &paths,
        0.0,
        1.0,
        0.01,
    )
    .unwrap();
    verdict(
        tv <= tv_bound && rep.residual <= 3.0 * rep.sigma && expm_err <= 1e-12,
        format!(
            "TV {tv:.2e} <= {tv_bound:.2e}, e^(-B) row error {expm_err:.1e}, Dynkin residual {:.2e} vs 3 sigma {:.2e}",
            rep.residual,
            3.0 * rep.sigma
        ),
    )
}

type Criterion = fn(&mut Shared) -> Verdict;

fn main() -> ExitCode {
    let criteria: [(u8, &str, Criterion); 9] = [
        (1, "critical value, scalar oracle", critical_value_scalar),
        (2, "cross-estimator agreement", cross_estimator),
        (3, "vanishing-discount convergence", vanishing_discount),
        (4, "rescaled limits and shift identity", rescaled_limits),
        (5, "property suite", property_suite),
        (6, "representation formula by Monte Carlo", monte_carlo),
        (7, "occupation-measure limit", occupation_limit),
        (8, "lower-bound inequality", lower_bound),
        (9, "Markov chain marginals and Dynkin", markov_marginals),
    ];
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut shared = Shared::default();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| run(&mut shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.passed {
            failures += 1;
        }
        println!(
            "criterion {id} ({name}): {} [{:.1}s] {}",
            if v.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failures == 0 {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
