//! Scenario files: an INI-like key-value format.
//!
//! ```text
//! # comment
//! name = scalar
//! seed = 7
//!
//! [problem]
//! dimension = 1
//! modes = 2
//! coupling = 1, -1, -1, 1      # row-major
//! c = 0
//!
//! [mode.1]
//! kind = quadratic             # quadratic | quadratic_drift | power
//! potential = 1 - cos(2*pi*x)
//! ```
//!
//! Arrays are comma lists. Every key is checked; unknown keys and
//! sections are errors that carry the line number.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::model::{
    ControlGrid, CouplingMatrix, HamiltonianKind, HamiltonianSpec, ModelError, Point, ProblemSpec,
    ScalarField, TorusGrid,
};
use crate::solver::{build_scheme, DiscreteScheme, SolveOptions, SolverError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Solve,
    Critical,
    Mather,
    Select,
    Converge,
    Montecarlo,
    All,
}

impl Pipeline {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "solve" => Pipeline::Solve,
            "critical" => Pipeline::Critical,
            "mather" => Pipeline::Mather,
            "select" => Pipeline::Select,
            "converge" => Pipeline::Converge,
            "montecarlo" => Pipeline::Montecarlo,
            "all" => Pipeline::All,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Solve => "solve",
            Pipeline::Critical => "critical",
            Pipeline::Mather => "mather",
            Pipeline::Select => "select",
            Pipeline::Converge => "converge",
            Pipeline::Montecarlo => "montecarlo",
            Pipeline::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    pub n: usize,
    /// Time step; `None` means `Δx`.
    pub h: Option<f64>,
    /// Controls per axis (odd, so that `v = 0` is a node).
    pub controls: usize,
    /// Control radius; `None` picks the problem default.
    pub v_max: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub lp_tol: f64,
    pub face_tol: f64,
    /// Random objectives used to search the optimal face.
    pub measures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub pipeline: Pipeline,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub probes: Vec<Point>,
    /// Zero-based mode used for the probes.
    pub probe_mode: usize,
    pub paths: usize,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub directory: PathBuf,
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub problem: ProblemSpec,
    /// Additive constant `c` in `λu + H(x, Du) + Bu = c`.
    pub c: f64,
    pub numerics: Numerics,
    pub experiment: Experiment,
    pub output: Output,
}

impl Scenario {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.numerics.tol,
            max_iter: self.numerics.max_iter,
            ..SolveOptions::default()
        }
    }

    pub fn scheme(&self) -> Result<DiscreteScheme, SolverError> {
        let dim = self.problem.dim();
        let grid = TorusGrid::new(dim, self.numerics.n)?;
        let v_max = self
            .numerics
            .v_max
            .unwrap_or_else(|| self.problem.default_v_max(self.c));
        let controls = ControlGrid::uniform(dim, self.numerics.controls, v_max)?;
        let h = self.numerics.h.unwrap_or(grid.spacing());
        build_scheme(self.problem.clone(), grid, controls, h)
    }

    /// Number of grid nodes.
    pub fn nodes(&self) -> usize {
        self.numerics.n.pow(self.problem.dim() as u32)
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    /// Errors on the first key nobody consumed.
    fn finish(self, section: &str) -> Result<(), ScenarioError> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(ScenarioError::Parse {
                line: e.line,
                message: format!("unknown key `{key}` in {section}"),
            }),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(String, Section)>, ScenarioError> {
    let mut sections: Vec<(String, Section)> = vec![(
        String::new(),
        Section {
            line: 0,
            entries: BTreeMap::new(),
        },
    )];
    for (ix, raw) in text.lines().enumerate() {
        let line = ix + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ScenarioError::Parse {
                    line,
                    message: "unterminated section header".into(),
                })?
                .trim()
                .to_string();
            if name.is_empty() {
                return Err(ScenarioError::Parse {
                    line,
                    message: "empty section name".into(),
                });
            }
            if sections.iter().any(|(n, _)| *n == name) {
                return Err(ScenarioError::Parse {
                    line,
                    message: format!("section [{name}] appears twice"),
                });
            }
            sections.push((
                name,
                Section {
                    line,
                    entries: BTreeMap::new(),
                },
            ));
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ScenarioError::Parse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ScenarioError::Parse {
                line,
                message: format!("invalid key `{key}`"),
            });
        }
        let section = &mut sections.last_mut().expect("root section").1;
        if section.entries.contains_key(key) {
            return Err(ScenarioError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        section.entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

fn parse_error(e: &Entry, key: &str, what: &str) -> ScenarioError {
    ScenarioError::Parse {
        line: e.line,
        message: format!("`{key}` expects {what}, found `{}`", e.value),
    }
}

fn get_f64(s: &mut Section, key: &str) -> Result<Option<f64>, ScenarioError> {
    s.take(key)
        .map(|e| {
            e.value
                .parse::<f64>()
                .map_err(|_| parse_error(&e, key, "a number"))
        })
        .transpose()
}

fn get_usize(s: &mut Section, key: &str) -> Result<Option<usize>, ScenarioError> {
    s.take(key)
        .map(|e| {
            e.value
                .parse::<usize>()
                .map_err(|_| parse_error(&e, key, "a nonnegative integer"))
        })
        .transpose()
}

fn get_u64(s: &mut Section, key: &str) -> Result<Option<u64>, ScenarioError> {
    s.take(key)
        .map(|e| {
            e.value
                .parse::<u64>()
                .map_err(|_| parse_error(&e, key, "a nonnegative integer"))
        })
        .transpose()
}

fn split_list(value: &str) -> Vec<&str> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn get_list<T: std::str::FromStr>(
    s: &mut Section,
    key: &str,
    what: &str,
) -> Result<Option<Vec<T>>, ScenarioError> {
    s.take(key)
        .map(|e| {
            split_list(&e.value)
                .into_iter()
                .map(|item| item.parse::<T>().map_err(|_| parse_error(&e, key, what)))
                .collect()
        })
        .transpose()
}

fn positive(field: &str, v: f64) -> Result<f64, ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn model(field: &str) -> impl Fn(ModelError) -> ScenarioError + '_ {
    move |e| invalid(field, e.to_string())
}

fn parse_mode(mut s: Section, name: &str, dim: usize) -> Result<HamiltonianSpec, ScenarioError> {
    let kind_name = s.take("kind").map_or("quadratic".to_string(), |e| e.value);
    let expr = s.take("potential");
    let samples: Option<Vec<f64>> = get_list(&mut s, "potential_samples", "a list of numbers")?;
    let potential = match (expr, samples) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                &format!("{name}.potential"),
                "give either `potential` or `potential_samples`, not both",
            ))
        }
        (Some(e), None) => ScalarField::parse(&e.value).map_err(|err| ScenarioError::Parse {
            line: e.line,
            message: format!("potential: {err}"),
        })?,
        (None, Some(v)) => {
            ScalarField::samples(dim, v).map_err(model(&format!("{name}.potential_samples")))?
        }
        (None, None) => ScalarField::constant(0.0),
    };
    let mut drift = s.take("drift");
    let exponent = get_f64(&mut s, "exponent")?;
    let kind = match kind_name.as_str() {
        "quadratic" => HamiltonianKind::Quadratic,
        "quadratic_drift" => {
            let e = drift
                .take()
                .ok_or_else(|| invalid(&format!("{name}.drift"), "required for quadratic_drift"))?;
            let fields = split_list(&e.value)
                .into_iter()
                .map(|item| {
                    ScalarField::parse(item).map_err(|err| ScenarioError::Parse {
                        line: e.line,
                        message: format!("drift: {err}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            HamiltonianKind::QuadraticDrift { drift: fields }
        }
        "power" => HamiltonianKind::Power {
            exponent: exponent
                .ok_or_else(|| invalid(&format!("{name}.exponent"), "required for power"))?,
        },
        other => {
            return Err(invalid(
                &format!("{name}.kind"),
                format!(
                "unknown catalog entry `{other}` (expected quadratic, quadratic_drift or power)"
            ),
            ))
        }
    };
    // still set only when the kind does not consume it
    if let Some(e) = drift {
        return Err(ScenarioError::Parse {
            line: e.line,
            message: format!("`drift` does not apply to kind {kind_name}"),
        });
    }
    if !matches!(kind, HamiltonianKind::Power { .. }) && exponent.is_some() {
        return Err(invalid(
            &format!("{name}.exponent"),
            format!("does not apply to kind {kind_name}"),
        ));
    }
    s.finish(&format!("[{name}]"))?;
    HamiltonianSpec::new(dim, kind, potential).map_err(model(name))
}

fn parse_point(item: &str, dim: usize) -> Option<Point> {
    let coords: Vec<f64> = item
        .split_whitespace()
        .map(|c| c.parse().ok())
        .collect::<Option<_>>()?;
    if coords.len() != dim {
        return None;
    }
    let mut p = [0.0; 2];
    p[..dim].copy_from_slice(&coords);
    Some(p)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sections = lex(text)?;
    let mut take_section = |name: &str| -> Option<Section> {
        sections
            .iter()
            .position(|(n, _)| n == name)
            .map(|ix| sections.remove(ix).1)
    };

    let mut root = take_section("").expect("root section");
    let name = root
        .take("name")
        .map(|e| e.value)
        .ok_or_else(|| invalid("name", "missing"))?;
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
    {
        return Err(invalid("name", "use letters, digits, '-', '_' or '.'"));
    }
    let seed = get_u64(&mut root, "seed")?.unwrap_or(0);
    root.finish("the top level")?;

    let mut problem = take_section("problem")
        .ok_or_else(|| invalid("problem", "section [problem] is missing"))?;
    let dim = get_usize(&mut problem, "dimension")?.unwrap_or(1);
    if !(1..=2).contains(&dim) {
        return Err(invalid(
            "problem.dimension",
            format!("expected 1 or 2, got {dim}"),
        ));
    }
    let modes = get_usize(&mut problem, "modes")?.unwrap_or(1);
    if modes == 0 {
        return Err(invalid("problem.modes", "at least one mode is required"));
    }
    let coupling = match get_list::<f64>(&mut problem, "coupling", "a list of numbers")? {
        Some(flat) => CouplingMatrix::from_flat(modes, &flat).map_err(model("problem.coupling"))?,
        None if modes == 1 => CouplingMatrix::scalar(),
        None => return Err(invalid("problem.coupling", "required when modes > 1")),
    };
    let c = get_f64(&mut problem, "c")?.unwrap_or(0.0);
    if !c.is_finite() {
        return Err(invalid("problem.c", "must be finite"));
    }
    problem.finish("[problem]")?;

    let mut hamiltonians = Vec::with_capacity(modes);
    for i in 1..=modes {
        let sec_name = format!("mode.{i}");
        let sec = take_section(&sec_name)
            .ok_or_else(|| invalid(&sec_name, format!("section [{sec_name}] is missing")))?;
        hamiltonians.push(parse_mode(sec, &sec_name, dim)?);
    }
    let problem = ProblemSpec::new(hamiltonians, coupling).map_err(model("problem"))?;

    let mut num = take_section("numerics")
        .ok_or_else(|| invalid("numerics", "section [numerics] is missing"))?;
    let n = get_usize(&mut num, "n")?.ok_or_else(|| invalid("numerics.n", "missing"))?;
    if n < 4 {
        return Err(invalid(
            "numerics.n",
            format!("at least 4 nodes per axis, got {n}"),
        ));
    }
    let numerics = Numerics {
        n,
        h: get_f64(&mut num, "h")?
            .map(|v| positive("numerics.h", v))
            .transpose()?,
        controls: get_usize(&mut num, "controls")?.unwrap_or(33),
        v_max: get_f64(&mut num, "v_max")?
            .map(|v| positive("numerics.v_max", v))
            .transpose()?,
        tol: positive("numerics.tol", get_f64(&mut num, "tol")?.unwrap_or(1e-9))?,
        max_iter: get_usize(&mut num, "max_iter")?.unwrap_or(5_000_000),
        lp_tol: positive(
            "numerics.lp_tol",
            get_f64(&mut num, "lp_tol")?.unwrap_or(1e-10),
        )?,
        face_tol: positive(
            "numerics.face_tol",
            get_f64(&mut num, "face_tol")?.unwrap_or(1e-8),
        )?,
        measures: get_usize(&mut num, "measures")?.unwrap_or(16),
    };
    if numerics.controls < 3 || numerics.controls.is_multiple_of(2) {
        return Err(invalid("numerics.controls", "must be odd and at least 3"));
    }
    if numerics.max_iter == 0 {
        return Err(invalid("numerics.max_iter", "must be positive"));
    }
    if numerics.measures == 0 {
        return Err(invalid("numerics.measures", "must be positive"));
    }
    num.finish("[numerics]")?;

    let mut exp = take_section("experiment").unwrap_or(Section {
        line: 0,
        entries: BTreeMap::new(),
    });
    let pipeline = match exp.take("pipeline") {
        None => Pipeline::Solve,
        Some(e) => Pipeline::parse(&e.value).ok_or_else(|| {
            invalid(
                "experiment.pipeline",
                format!(
                    "`{}` is not one of solve, critical, mather, select, converge, montecarlo, all",
                    e.value
                ),
            )
        })?,
    };
    let lambdas = get_list::<f64>(&mut exp, "lambdas", "a list of numbers")?
        .unwrap_or_else(|| vec![0.4, 0.2, 0.1]);
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(invalid(
            "experiment.lambdas",
            "discount rates must be positive",
        ));
    }
    if lambdas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(invalid(
            "experiment.lambdas",
            "discount rates must be strictly decreasing",
        ));
    }
    let seeds = get_list::<u64>(&mut exp, "seeds", "a list of nonnegative integers")?
        .unwrap_or_else(|| vec![seed]);
    if seeds.is_empty() {
        return Err(invalid("experiment.seeds", "at least one seed is required"));
    }
    let probes = match exp.take("probes") {
        None => vec![[0.5, if dim == 2 { 0.5 } else { 0.0 }]],
        Some(e) => split_list(&e.value)
            .into_iter()
            .map(|item| {
                parse_point(item, dim)
                    .ok_or_else(|| parse_error(&e, "probes", "points with `dimension` coordinates"))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    if probes.is_empty() {
        return Err(invalid(
            "experiment.probes",
            "at least one probe point is required",
        ));
    }
    let probe_mode = get_usize(&mut exp, "probe_mode")?.unwrap_or(1);
    if probe_mode == 0 || probe_mode > modes {
        return Err(invalid(
            "experiment.probe_mode",
            format!("expected 1..={modes}"),
        ));
    }
    let paths = get_usize(&mut exp, "paths")?.unwrap_or(10_000);
    if paths == 0 {
        return Err(invalid("experiment.paths", "must be positive"));
    }
    let horizon = get_f64(&mut exp, "horizon")?
        .map(|v| positive("experiment.horizon", v))
        .transpose()?;
    exp.finish("[experiment]")?;
    let experiment = Experiment {
        pipeline,
        lambdas,
        seeds,
        probes,
        probe_mode: probe_mode - 1,
        paths,
        horizon,
    };
    if matches!(pipeline, Pipeline::Critical | Pipeline::All) && experiment.lambdas.len() < 2 {
        return Err(invalid(
            "experiment.lambdas",
            "the critical pipeline needs at least two rates",
        ));
    }
    if matches!(pipeline, Pipeline::Converge | Pipeline::All) && experiment.lambdas.len() < 3 {
        return Err(invalid(
            "experiment.lambdas",
            "the converge pipeline needs at least three rates",
        ));
    }

    let mut out = take_section("output").unwrap_or(Section {
        line: 0,
        entries: BTreeMap::new(),
    });
    let directory = out
        .take("directory")
        .map_or_else(|| PathBuf::from("out"), |e| PathBuf::from(e.value));
    let formats: Vec<String> = get_list(&mut out, "formats", "a list of formats")?
        .unwrap_or_else(|| vec!["csv".into(), "json".into()]);
    let mut output = Output {
        directory,
        csv: false,
        json: false,
    };
    for f in &formats {
        match f.as_str() {
            "csv" => output.csv = true,
            "json" => output.json = true,
            other => {
                return Err(invalid(
                    "output.formats",
                    format!("unknown format `{other}` (csv, json)"),
                ))
            }
        }
    }
    if !(output.csv || output.json) {
        return Err(invalid("output.formats", "at least one format is required"));
    }
    out.finish("[output]")?;

    if let Some((name, s)) = sections.into_iter().next() {
        return Err(ScenarioError::Parse {
            line: s.line,
            message: format!("unknown section [{name}]"),
        });
    }

    Ok(Scenario {
        name,
        seed,
        problem,
        c,
        numerics,
        experiment,
        output,
    })
}
