//! Command-line front end for the `cvxfeas` solvers.

pub mod commands;
pub mod config;
pub mod problem;
pub mod trace_csv;

use clap::{Args, Parser, Subcommand};
use config::{parse_policy, ConfigFile, FlagOverrides, RunSettings};
use std::io::Write;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("invalid {field}: {constraint}")]
    Validation { field: String, constraint: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Solver(#[from] cvxfeas::SolverError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "cvxfeas", version, about = "Convex feasibility by supporting halfspaces and quadratic programming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem.
    Solve(SolveArgs),
    /// Compare working-set policies and baselines on one or more problems.
    Bench(BenchArgs),
    /// Rate, kappa and angle statistics of a stored trace.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// `current`, `last:P`, `all` or `pruned:ALPHA,P`.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Dual active-set steps per partial solve.
    #[arg(long = "gi-budget")]
    pub gi_budget: Option<usize>,
    /// JSON settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SolverFlags {
    fn settings(&self, jobs: Option<usize>) -> Result<RunSettings, CliError> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let flags = FlagOverrides {
            policy: self.policy.clone(),
            tol: self.tol,
            max_iter: self.max_iter,
            gi_budget: self.gi_budget,
        };
        let mut s = RunSettings::resolve(&file, &flags)?;
        if jobs.is_some() {
            s.jobs = jobs;
        }
        if s.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long = "trace-out")]
    pub trace_out: Option<PathBuf>,
    /// Written when the run ends infeasible.
    #[arg(long = "cert-out")]
    pub cert_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Repeat for several problems.
    #[arg(long, required = true)]
    pub problem: Vec<PathBuf>,
    /// Policies to compare, repeatable; replaces the default matrix.
    #[arg(long)]
    pub policy: Vec<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "gi-budget")]
    pub gi_budget: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// CSV copy of the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Trace CSV written by `solve --trace-out`.
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
}

/// Runs a parsed command, writing its report to `out`, and returns the exit
/// status.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let io = |e| CliError::Io { path: "<output>".into(), source: e };
    match &cli.command {
        Command::Solve(a) => {
            let file = problem::parse_problem(&a.problem)?;
            let settings = a.solver.settings(None)?;
            let req = commands::SolveRequest {
                file: &file,
                settings: &settings,
                trace_out: a.trace_out.as_deref(),
                cert_out: a.cert_out.as_deref(),
            };
            let (text, code) = commands::solve(&req)?;
            out.write_all(text.as_bytes()).map_err(io)?;
            Ok(code)
        }
        Command::Bench(a) => {
            let flags = SolverFlags {
                policy: None,
                tol: a.tol,
                max_iter: a.max_iter,
                gi_budget: a.gi_budget,
                config: a.config.clone(),
            };
            let settings = flags.settings(a.jobs)?;
            let policies = a.policy.iter().map(|p| parse_policy(p)).collect::<Result<Vec<_>, _>>()?;
            let files = a
                .problem
                .iter()
                .map(|p| Ok((p.display().to_string(), problem::parse_problem(p)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            let rows = commands::bench(&files, &policies, &settings)?;
            out.write_all(commands::render_bench(&rows).as_bytes()).map_err(io)?;
            if let Some(out) = &a.out {
                commands::write_bench_csv(out, &rows)?;
            }
            Ok(0)
        }
        Command::Diagnose(a) => {
            let file = problem::parse_problem(&a.problem)?;
            let settings = a.solver.settings(None)?;
            let d = commands::diagnose_file(&file, &a.trace, &settings)?;
            out.write_all(commands::render_diagnosis(&d).as_bytes()).map_err(io)?;
            Ok(0)
        }
    }
}
