//! Executes a scenario and writes its artifacts.
//!
//! Every file goes through [`Artifacts`], which records its SHA-256 for the
//! manifest. Wall-clock timings are kept out of the manifest in
//! `timings.json` so that repeated runs produce identical manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::mather::{
    build_lp, closedness_residual, extreme_mather_measures, solve_lp, DiscreteMeasure, FaceOptions,
    MatherError, MatherSolution, SUPPORT_THRESHOLD,
};
use crate::model::GridVectorFunction;
use crate::montecarlo::{simulate_discounted_cost, synthesize_feedback, McReport, SimulationSpec};
use crate::scenario::{Pipeline, Scenario};
use crate::selection::{
    compute_u0, convergence_study, verify_u0_membership, SelectionError, SelectionProblem,
};
use crate::solver::{
    estimate_critical_value, solve_discounted_with, write_grid_function_csv, DiscreteScheme,
    SolverError,
};

/// Largest tolerated gap between the two critical-value estimators.
pub const CRITICAL_AGREEMENT: f64 = 3e-2;
/// Slack added to `3·stderr` when comparing simulated and grid values.
pub const MC_SLACK: f64 = 5e-2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Mather(#[from] MatherError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// A pass/fail contract evaluated during the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub pipeline: Pipeline,
    pub outputs: Vec<OutputRecord>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Artifacts {
    dir: PathBuf,
    csv: bool,
    json: bool,
    records: Vec<OutputRecord>,
}

impl Artifacts {
    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(file);
        fs::write(&path, bytes).map_err(|source| RunError::Io { path, source })?;
        self.records.push(OutputRecord {
            file: file.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn csv(
        &mut self,
        file: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), RunError> {
        if !self.csv {
            return Ok(());
        }
        let mut buf = Vec::new();
        fill(&mut buf).expect("writing to memory");
        self.write(file, &buf)
    }

    fn json(&mut self, file: &str, value: &impl Serialize) -> Result<(), RunError> {
        if !self.json {
            return Ok(());
        }
        let mut buf = serde_json::to_vec_pretty(value).expect("serializable report");
        buf.push(b'\n');
        self.write(file, &buf)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Results shared between stages.
struct Context<'a> {
    scenario: &'a Scenario,
    scheme: DiscreteScheme,
    seed: u64,
    mc_seeds: Vec<u64>,
    mather: Option<(MatherSolution, Vec<DiscreteMeasure>)>,
    u0: Option<GridVectorFunction>,
    critical_estimate: Option<f64>,
    checks: Vec<Check>,
    timings: Vec<(String, f64)>,
}

fn check(name: &str, value: f64, threshold: f64, passed: bool) -> Check {
    Check {
        name: name.to_string(),
        passed,
        value,
        threshold,
    }
}

impl<'a> Context<'a> {
    fn probe_indices(&self) -> Vec<usize> {
        let grid = self.scheme.grid();
        self.scenario
            .experiment
            .probes
            .iter()
            .map(|p| self.scenario.experiment.probe_mode * grid.len() + grid.nearest_node(p))
            .collect()
    }

    fn solve(&mut self, out: &mut Artifacts) -> Result<(), RunError> {
        let s = self.scenario;
        let opts = s.solve_options();
        let mut summary = Vec::new();
        let mut prev: Option<GridVectorFunction> = None;
        for (ix, &lambda) in s.experiment.lambdas.iter().enumerate() {
            let sol = solve_discounted_with(&self.scheme, lambda, s.c, &opts, prev.as_ref())?;
            out.csv(&format!("solution_{ix}.csv"), |b| {
                write_grid_function_csv(self.scheme.grid(), &sol.u, b)
            })?;
            out.csv(&format!("solution_{ix}_log.csv"), |b| sol.write_log_csv(b))?;
            summary.push(json!({
                "lambda": lambda,
                "c": s.c,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "min": sol.u.min(),
                "max": sol.u.max(),
                "effective_rate_times_mean": self.scheme.effective_rate(lambda) * sol.u.mean(),
            }));
            prev = Some(sol.u);
        }
        out.json("solve.json", &summary)
    }

    fn critical(&mut self, out: &mut Artifacts) -> Result<(), RunError> {
        let s = self.scenario;
        let est = estimate_critical_value(&self.scheme, &s.experiment.lambdas, &s.solve_options())?;
        out.csv("critical.csv", |b| {
            use std::io::Write;
            writeln!(b, "lambda,effective_rate,estimate")?;
            for (l, r) in est.lambdas.iter().zip(&est.raw) {
                writeln!(
                    b,
                    "{:.16e},{:.16e},{:.16e}",
                    l,
                    self.scheme.effective_rate(*l),
                    r
                )?;
            }
            Ok(())
        })?;
        out.json("critical.json", &est)?;
        self.critical_estimate = Some(est.value);
        Ok(())
    }

    fn mather(&mut self, out: &mut Artifacts) -> Result<(), RunError> {
        if self.mather.is_some() {
            return Ok(());
        }
        let s = self.scenario;
        let lp = build_lp(&self.scheme)?;
        let sol = solve_lp(&self.scheme, &lp, s.numerics.lp_tol)?;
        let face = FaceOptions {
            count: s.numerics.measures,
            seed: self.seed,
            face_tol: s.numerics.face_tol,
        };
        let found = extreme_mather_measures(&self.scheme, &lp, &sol, &face)?;
        let mut measures = Vec::new();
        for (q, mu) in found.measures.iter().enumerate() {
            out.csv(&format!("mather_measure_{q}.csv"), |b| {
                mu.write_csv(&self.scheme, b)
            })?;
            measures.push(json!({
                "action": mu.action(&self.scheme),
                "closedness_residual": closedness_residual(&self.scheme, mu)?,
                "support": mu.support_records(&self.scheme, SUPPORT_THRESHOLD),
            }));
        }
        out.csv("mather_subsolution.csv", |b| {
            write_grid_function_csv(self.scheme.grid(), &sol.subsolution, b)
        })?;
        out.json(
            "mather.json",
            &json!({
                "critical_value": sol.critical_value,
                "objective": sol.objective,
                "duality_gap": sol.duality_gap,
                "dual_infeasibility": sol.dual_infeasibility,
                "primal_residual": sol.primal_residual,
                "closedness_residual": sol.closedness_residual,
                "iterations": sol.iterations,
                "face_attempts": found.attempts,
                "measures": measures,
            }),
        )?;
        self.checks.push(check(
            "lp_duality_gap",
            sol.duality_gap,
            1e-8,
            sol.duality_gap <= 1e-8,
        ));
        self.mather = Some((sol, found.measures));
        Ok(())
    }

    fn select(&mut self, out: &mut Artifacts) -> Result<(), RunError> {
        if self.u0.is_some() {
            return Ok(());
        }
        self.mather(out)?;
        let (sol, measures) = self.mather.as_ref().expect("mather stage ran");
        let sel = SelectionProblem::new(
            &self.scheme,
            sol.critical_value,
            measures.clone(),
            self.scenario.numerics.face_tol,
        )?;
        let u0 = compute_u0(&sel)?;
        let report = verify_u0_membership(&sel, &u0)?;
        out.csv("u0.csv", |b| {
            write_grid_function_csv(self.scheme.grid(), &u0, b)
        })?;
        out.json(
            "selection.json",
            &json!({
                "critical_value": sol.critical_value,
                "measures": measures.len(),
                "membership": report,
            }),
        )?;
        self.checks.push(check(
            "u0_membership",
            (-report.min_defect).max(report.max_defect),
            1e-6,
            report.passed(),
        ));
        self.u0 = Some(u0);
        Ok(())
    }

    fn converge(&mut self, out: &mut Artifacts) -> Result<(), RunError> {
        self.select(out)?;
        let c_h = self
            .mather
            .as_ref()
            .expect("mather stage ran")
            .0
            .critical_value;
        let u0 = self.u0.as_ref().expect("selection stage ran");
        let s = self.scenario;
        let (report, _) = convergence_study(
            &self.scheme,
            c_h,
            u0,
            &s.experiment.lambdas,
            &self.probe_indices(),
            &s.solve_options(),
        )?;
        out.csv("convergence.csv", |b| report.write_csv(b))?;
        out.json("convergence.json", &report)?;
        let worst = report
            .rows
            .windows(2)
            .map(|p| p[1].distance / p[0].distance.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        self.checks
            .push(check("convergence_monotone", worst, 1.1, report.monotone));
        Ok(())
    }

    fn montecarlo(&mut self, out: &mut Artifacts) -> Result<(), RunError> {
        let s = self.scenario;
        let lambda = s.experiment.lambdas[0];
        let sol = solve_discounted_with(&self.scheme, lambda, s.c, &s.solve_options(), None)?;
        let policy = synthesize_feedback(&self.scheme, &sol.u, lambda, s.c)?;
        let grid = self.scheme.grid();
        let mode = s.experiment.probe_mode;
        let mut reports = Vec::new();
        let mut worst: f64 = f64::NEG_INFINITY;
        for &seed in &self.mc_seeds {
            for probe in &s.experiment.probes {
                let spec = SimulationSpec {
                    start: *probe,
                    mode,
                    lambda,
                    c: s.c,
                    paths: s.experiment.paths,
                    horizon: s
                        .experiment
                        .horizon
                        .unwrap_or(SimulationSpec::default_horizon(lambda)),
                    seed,
                };
                let est = simulate_discounted_cost(&self.scheme, &policy, &spec)?;
                let grid_value = grid.interpolate(sol.u.component(mode), probe);
                let bound = 3.0 * est.stderr + est.tail_bound + MC_SLACK;
                worst = worst.max((est.estimate - grid_value).abs() - bound);
                reports.push(McReport {
                    scenario: s.name.clone(),
                    seed,
                    estimate: est.estimate,
                    stderr: est.stderr,
                    tail_bound: est.tail_bound,
                    grid_value,
                    paths: est.paths,
                });
            }
        }
        out.csv("montecarlo.csv", |b| {
            use std::io::Write;
            writeln!(b, "seed,x,y,estimate,stderr,tail_bound,grid_value")?;
            let points = s.experiment.probes.iter().cycle();
            for (r, p) in reports.iter().zip(points) {
                writeln!(
                    b,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    r.seed, p[0], p[1], r.estimate, r.stderr, r.tail_bound, r.grid_value
                )?;
            }
            Ok(())
        })?;
        out.json("montecarlo.json", &reports)?;
        self.checks
            .push(check("montecarlo_representation", worst, 0.0, worst <= 0.0));
        Ok(())
    }

    fn timed(
        &mut self,
        stage: &str,
        out: &mut Artifacts,
        f: impl FnOnce(&mut Self, &mut Artifacts) -> Result<(), RunError>,
    ) -> Result<(), RunError> {
        let start = Instant::now();
        info!("stage {stage}");
        f(self, out)?;
        self.timings
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        Ok(())
    }
}

/// Runs the scenario's pipeline into `out_dir`. `seed` replaces the
/// scenario seed and the Monte Carlo seed list when given.
pub fn run(
    scenario: &Scenario,
    input: &str,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<RunSummary, RunError> {
    let total = Instant::now();
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut out = Artifacts {
        dir: out_dir.to_path_buf(),
        csv: scenario.output.csv,
        json: scenario.output.json,
        records: Vec::new(),
    };
    let build = Instant::now();
    let scheme = scenario.scheme()?;
    let mut ctx = Context {
        scenario,
        scheme,
        seed: seed.unwrap_or(scenario.seed),
        mc_seeds: seed.map_or_else(|| scenario.experiment.seeds.clone(), |s| vec![s]),
        mather: None,
        u0: None,
        critical_estimate: None,
        checks: Vec::new(),
        timings: vec![("scheme".to_string(), build.elapsed().as_secs_f64())],
    };
    let p = scenario.experiment.pipeline;
    if matches!(p, Pipeline::Solve | Pipeline::All) {
        ctx.timed("solve", &mut out, Context::solve)?;
    }
    if matches!(p, Pipeline::Critical | Pipeline::All) {
        ctx.timed("critical", &mut out, Context::critical)?;
    }
    if matches!(p, Pipeline::Mather | Pipeline::All) {
        ctx.timed("mather", &mut out, Context::mather)?;
    }
    if matches!(p, Pipeline::Select | Pipeline::All) {
        ctx.timed("select", &mut out, Context::select)?;
    }
    if matches!(p, Pipeline::Converge | Pipeline::All) {
        ctx.timed("converge", &mut out, Context::converge)?;
    }
    if matches!(p, Pipeline::Montecarlo | Pipeline::All) {
        ctx.timed("montecarlo", &mut out, Context::montecarlo)?;
    }
    if let (Some(est), Some((sol, _))) = (ctx.critical_estimate, ctx.mather.as_ref()) {
        let gap = (est - sol.critical_value).abs();
        ctx.checks.push(check(
            "critical_agreement",
            gap,
            CRITICAL_AGREEMENT,
            gap <= CRITICAL_AGREEMENT,
        ));
    }
    ctx.timings
        .push(("total".to_string(), total.elapsed().as_secs_f64()));

    let manifest = json!({
        "name": scenario.name,
        "scenario_sha256": sha256_hex(input.as_bytes()),
        "seed": ctx.seed,
        "monte_carlo_seeds": ctx.mc_seeds,
        "pipeline": p,
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": out.records,
        "checks": ctx.checks,
        "timings": "timings.json",
    });
    let write_plain = |file: &str, value: &serde_json::Value| -> Result<(), RunError> {
        let path = out_dir.join(file);
        let mut buf = serde_json::to_vec_pretty(value).expect("json");
        buf.push(b'\n');
        fs::write(&path, buf).map_err(|source| RunError::Io { path, source })
    };
    let timings: serde_json::Map<String, serde_json::Value> = ctx
        .timings
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    write_plain("timings.json", &serde_json::Value::Object(timings))?;
    write_plain("manifest.json", &manifest)?;
    Ok(RunSummary {
        name: scenario.name.clone(),
        seed: ctx.seed,
        pipeline: p,
        outputs: out.records,
        checks: ctx.checks,
        timings: ctx.timings,
    })
}
