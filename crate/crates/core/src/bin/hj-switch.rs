//! Command-line front end: `hj-switch run` and `hj-switch validate`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hj_switch::pipeline::{self, RunError};
use hj_switch::scenario::{parse_scenario, Scenario};

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "hj-switch",
    version,
    about = "Batch runner for weakly coupled Hamilton-Jacobi scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scenario's pipeline and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides `[output] directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides the scenario seed and its Monte Carlo seeds).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

fn load(path: &PathBuf) -> Result<(String, Scenario), ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })?;
    match parse_scenario(&text) {
        Ok(s) => Ok((text, s)),
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            Err(ExitCode::from(EXIT_PARSE))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match load(&scenario) {
            Ok((_, s)) => {
                println!(
                    "{}: ok ({} mode(s), dimension {}, n = {}, pipeline {})",
                    s.name,
                    s.problem.modes(),
                    s.problem.dim(),
                    s.numerics.n,
                    s.experiment.pipeline.name()
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            scenario,
            out,
            seed,
            threads,
        } => {
            let (text, s) = match load(&scenario) {
                Ok(v) => v,
                Err(code) => return code,
            };
            if let Some(k) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                {
                    eprintln!("error: cannot configure {k} threads: {e}");
                    return ExitCode::from(EXIT_PARSE);
                }
            }
            let dir = out.unwrap_or_else(|| s.output.directory.clone());
            match pipeline::run(&s, &text, &dir, seed) {
                Ok(summary) => {
                    for f in &summary.outputs {
                        println!("wrote {}", dir.join(&f.file).display());
                    }
                    for c in &summary.checks {
                        println!(
                            "check {:<28} {} (value {:.6e}, threshold {:.6e})",
                            c.name,
                            if c.passed { "PASS" } else { "FAIL" },
                            c.value,
                            c.threshold
                        );
                    }
                    if summary.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_CHECK)
                    }
                }
                Err(e @ RunError::Io { .. }) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_IO)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_NUMERIC)
                }
            }
        }
    }
}
