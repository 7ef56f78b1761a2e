//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::combinatorics::EnumerationCap;
use crate::corrector::CorrectorOptions;
use crate::error::{Error, Result};
use crate::statespace::MeasurementSet;

use super::config::{load_scenario, ScenarioConfig};
use super::simulate::{simulate, StepResult};
use super::verify::{run_suite, SuiteReport, SUITES};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "etcphd",
    version,
    about = "Extended-target CPHD corrector on discrete state grids"
)]
struct Cli {
    /// Worker threads for the corrector; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct CapArgs {
    /// Largest measurement set enumerated exhaustively.
    #[arg(long)]
    max_z: Option<usize>,
    /// Required for --max-z above 8; enumeration cost grows with the Bell number.
    #[arg(long)]
    acknowledge_cost: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One corrector step on a scenario's first measurement set.
    Update {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// JSON measurement sets, overriding those in the config.
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Result file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cap: CapArgs,
        /// Record wall time in the result.
        #[arg(long)]
        timing: bool,
    },
    /// Seeded ground truth, measurements and predict/correct cycles.
    Simulate {
        /// Scenario JSON file with a `simulation` block.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `simulation.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `simulation.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cap: CapArgs,
        /// Record wall time per step.
        #[arg(long)]
        timing: bool,
    },
    /// Seeded verification suites.
    Verify {
        /// Suite name, repeatable; `all` runs every suite.
        #[arg(long = "suite", default_value = "all", value_parser = suite_names())]
        suites: Vec<String>,
        /// Seeds per suite.
        #[arg(long, default_value_t = 25)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report; written to the temp directory on failure when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cap: CapArgs,
    },
    /// Partition weights and coefficient dump for a scenario.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Coefficient table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cap: CapArgs,
    },
}

fn suite_names() -> clap::builder::PossibleValuesParser {
    let mut names = vec!["all"];
    names.extend(SUITES);
    clap::builder::PossibleValuesParser::new(names)
}

/// A measurement file holds either one set or a list of sets.
#[derive(Deserialize)]
#[serde(untagged)]
enum MeasurementFile {
    One(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

fn load_measurements(path: &Path) -> Result<Vec<MeasurementSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let parsed: MeasurementFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(match parsed {
        MeasurementFile::One(v) => vec![MeasurementSet::new(v)],
        MeasurementFile::Many(v) => v.into_iter().map(MeasurementSet::new).collect(),
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Io(_)
        | Error::InvalidDistribution(_)
        | Error::ModelViolation(_)
        | Error::SizeLimit { .. }
        | Error::OutOfRange { .. }
        | Error::Dimension(_) => EXIT_VALIDATION,
        _ => EXIT_FAILURE,
    }
}

fn describe(e: &Error) -> String {
    match e {
        Error::Validation(list) => {
            let mut s = String::from("invalid scenario:");
            for l in list {
                s.push_str("\n  ");
                s.push_str(l);
            }
            s
        }
        Error::SizeLimit { .. } => format!("{e}\nraise the cap with --max-z N --acknowledge-cost"),
        _ => e.to_string(),
    }
}

/// Failure of a `--max-z` request, reported as a usage error.
#[derive(Debug)]
struct CapRequest(Error);

fn options_for(config: Option<&ScenarioConfig>, cap: CapArgs) -> std::result::Result<CorrectorOptions, CapRequest> {
    let mut options = config.map(|c| c.options).unwrap_or_default();
    if let Some(m) = cap.max_z {
        options.cap = EnumerationCap::new(m, cap.acknowledge_cost).map_err(CapRequest)?;
    }
    Ok(options)
}

/// Command failure, split by exit code class.
enum Outcome {
    Usage(String),
    Failed(Error),
}

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        Outcome::Failed(e)
    }
}

impl From<std::io::Error> for Outcome {
    fn from(e: std::io::Error) -> Self {
        Outcome::Failed(e.into())
    }
}

impl From<CapRequest> for Outcome {
    fn from(e: CapRequest) -> Self {
        Outcome::Usage(match e.0 {
            Error::SizeLimit { .. } => format!("{}; pass --acknowledge-cost to accept it", e.0),
            other => other.to_string(),
        })
    }
}

type CommandResult = std::result::Result<i32, Outcome>;

fn write_json<T: Serialize>(value: &T, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => writeln!(stdout, "{text}").map_err(Error::from),
    }
}

fn config_with_measurements(config: &Path, measurements: Option<&Path>) -> Result<ScenarioConfig> {
    let mut c = load_scenario(config)?;
    if let Some(path) = measurements {
        c.measurements = load_measurements(path)?;
    }
    Ok(c)
}

fn update(
    config: &Path,
    measurements: Option<&Path>,
    out: Option<&Path>,
    cap: CapArgs,
    timing: bool,
    stdout: &mut dyn Write,
) -> CommandResult {
    let c = config_with_measurements(config, measurements)?;
    let options = options_for(Some(&c), cap)?;
    let scenario = c.scenario(0);
    let start = Instant::now();
    let result = scenario.step(options)?;
    let elapsed = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    write_json(
        &StepResult::new(0, scenario.measurements.len(), result, elapsed),
        out,
        stdout,
    )?;
    Ok(EXIT_PASS)
}

fn run_simulate(
    config: &Path,
    seed: Option<u64>,
    steps: Option<usize>,
    out: Option<&Path>,
    cap: CapArgs,
    timing: bool,
    stdout: &mut dyn Write,
) -> CommandResult {
    let mut c = load_scenario(config)?;
    c.options = options_for(Some(&c), cap)?;
    let sim = c.simulation.as_ref();
    let seed = seed.or(sim.map(|s| s.seed)).unwrap_or(0);
    let steps = steps.or(sim.map(|s| s.steps)).unwrap_or(1);
    let output = simulate(&c, seed, steps, timing)?;
    write_json(&output, out, stdout)?;
    if out.is_some() {
        for s in &output.steps {
            let r = &s.update.result;
            writeln!(
                stdout,
                "step {}: {} targets, {} measurements, posterior mean {:.6}",
                s.step,
                s.truth.len(),
                s.measurements.len(),
                r.diagnostics.mean_from_cardinality
            )?;
        }
    }
    Ok(EXIT_PASS)
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    suites: &'a [SuiteReport],
}

fn verify(
    suites: &[String],
    seeds: u64,
    seed: u64,
    out: Option<&Path>,
    cap: CapArgs,
    stdout: &mut dyn Write,
) -> CommandResult {
    let names: Vec<&str> = if suites.iter().any(|s| s == "all") {
        SUITES.to_vec()
    } else {
        suites.iter().map(String::as_str).collect()
    };
    let options = options_for(None, cap)?;
    let mut reports = Vec::new();
    for name in names {
        let report = run_suite(name, seed, seeds, options)?;
        writeln!(stdout, "{}", report.summary())?;
        if name == "combinatorics" {
            let counts: Vec<String> = report.entries.iter().map(|e| e.report.notes.join("")).collect();
            writeln!(stdout, "  {}", counts.join("; "))?;
        }
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.passed);
    let path = match out {
        Some(p) => Some(p.to_path_buf()),
        None if !passed => Some(std::env::temp_dir().join("etcphd-verify-report.json")),
        None => None,
    };
    if let Some(p) = &path {
        write_json(&VerifyOutput { suites: &reports }, Some(p), stdout)?;
    }
    if passed {
        Ok(EXIT_PASS)
    } else {
        writeln!(
            stdout,
            "verification failed; report written to {}",
            path.expect("set on failure").display()
        )?;
        Ok(EXIT_FAILURE)
    }
}

fn inspect(
    config: &Path,
    measurements: Option<&Path>,
    out: Option<&Path>,
    cap: CapArgs,
    stdout: &mut dyn Write,
) -> CommandResult {
    let c = config_with_measurements(config, measurements)?;
    let options = options_for(Some(&c), cap)?;
    let scenario = c.scenario(0);
    let r = scenario.step(options)?;
    let t = &r.coefficients;
    writeln!(
        stdout,
        "{} grid points, {} measurements, {} partitions, {} sub-partition terms",
        scenario.grid.len(),
        scenario.measurements.len(),
        r.diagnostics.partition_count,
        r.diagnostics.subpartition_count
    )?;
    writeln!(stdout, "phi = {:.17e}", t.phi)?;
    writeln!(stdout, "kappa = {:.17e}", t.kappa)?;
    writeln!(stdout, "sum over partitions of prod beta = {:.17e}", t.partition_sum)?;
    writeln!(stdout, "cell  eta  beta")?;
    for (e, b) in t.eta.iter().zip(&t.beta) {
        writeln!(stdout, "  {}  {:.17e}  {:.17e}", e.cell, e.value, b.value)?;
    }
    writeln!(stdout, "partition  omega")?;
    for o in &t.omega {
        writeln!(stdout, "  {}  {:.17e}", o.partition, o.value)?;
    }
    if let Some(path) = out {
        write_json(t, Some(path), stdout)?;
    }
    Ok(EXIT_PASS)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CommandResult {
    match cli.command {
        Command::Update {
            config,
            measurements,
            out,
            cap,
            timing,
        } => update(&config, measurements.as_deref(), out.as_deref(), cap, timing, stdout),
        Command::Simulate {
            config,
            seed,
            steps,
            out,
            cap,
            timing,
        } => run_simulate(&config, seed, steps, out.as_deref(), cap, timing, stdout),
        Command::Verify {
            suites,
            seeds,
            seed,
            out,
            cap,
        } => verify(&suites, seeds, seed, out.as_deref(), cap, stdout),
        Command::Inspect {
            config,
            measurements,
            out,
            cap,
        } => inspect(&config, measurements.as_deref(), out.as_deref(), cap, stdout),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let text = e.render().to_string();
            let _ = if code == EXIT_PASS {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    // Output is buffered so the command can run inside a sized pool.
    let mut buffer = Vec::new();
    let outcome = match cli.threads {
        Some(0) => Err(Outcome::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli, &mut buffer)),
            Err(e) => Err(Outcome::Failed(Error::Io(e.to_string()))),
        },
        None => dispatch(cli, &mut buffer),
    };
    let _ = stdout.write_all(&buffer);
    match outcome {
        Ok(code) => code,
        Err(Outcome::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Outcome::Failed(e)) => {
            let _ = writeln!(stderr, "error: {}", describe(&e));
            exit_code(&e)
        }
    }
}
