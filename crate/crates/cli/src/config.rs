//! Solver settings from `--config` JSON and command-line flags; flags win.

use crate::CliError;
use cvxfeas::{SolverConfig, WorkingSetPolicy};
use serde::Deserialize;
use std::path::Path;

/// `current`, `last:P`, `all` or `pruned:ALPHA,P`.
pub fn parse_policy(text: &str) -> Result<WorkingSetPolicy, CliError> {
    let bad = |why: &str| CliError::Usage(format!("invalid policy {text:?}: {why}"));
    let (name, arg) = text.split_once(':').unwrap_or((text, ""));
    match (name, arg) {
        ("current", "") => Ok(WorkingSetPolicy::CurrentRoundOnly),
        ("all", "") => Ok(WorkingSetPolicy::AllAccumulating),
        ("last", p) => Ok(WorkingSetPolicy::LastRounds { window: p.parse().map_err(|_| bad("expected last:P"))? }),
        ("pruned", args) => {
            let (alpha, p) = args.split_once(',').ok_or_else(|| bad("expected pruned:ALPHA,P"))?;
            let max_angle: f64 = alpha.parse().map_err(|_| bad("angle is not a number"))?;
            let window = p.parse().map_err(|_| bad("window is not an integer"))?;
            Ok(WorkingSetPolicy::AnglePruned { max_angle, window })
        }
        _ => Err(bad("expected current, last:P, all or pruned:ALPHA,P")),
    }
}

pub fn format_policy(policy: &WorkingSetPolicy) -> String {
    match policy {
        WorkingSetPolicy::CurrentRoundOnly => "current".into(),
        WorkingSetPolicy::AllAccumulating => "all".into(),
        WorkingSetPolicy::LastRounds { window } => format!("last:{window}"),
        WorkingSetPolicy::AnglePruned { max_angle, window } => format!("pruned:{max_angle},{window}"),
    }
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub policy: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub gi_budget: Option<usize>,
    pub extrapolation_grid: Option<Vec<f64>>,
    pub aggregation: Option<bool>,
    pub divergence_cap: Option<f64>,
    pub p_values: Option<Vec<usize>>,
    pub angle_window: Option<usize>,
    pub max_angle: Option<f64>,
    pub jobs: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            location: format!("{}: line {}, column {}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagOverrides {
    pub policy: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub gi_budget: Option<usize>,
}

/// Everything a command needs besides the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub solver: SolverConfig,
    pub p_values: Vec<usize>,
    pub angle_window: usize,
    pub max_angle: f64,
    pub jobs: Option<usize>,
}

impl RunSettings {
    pub fn resolve(file: &ConfigFile, flags: &FlagOverrides) -> Result<Self, CliError> {
        let mut solver = SolverConfig::default();
        if let Some(p) = flags.policy.as_deref().or(file.policy.as_deref()) {
            solver.policy = parse_policy(p)?;
        }
        if let Some(t) = flags.tol.or(file.tol) {
            solver.tol_feas = t;
        }
        if let Some(n) = flags.max_iter.or(file.max_iter) {
            solver.max_outer = n;
        }
        solver.gi_step_budget = flags.gi_budget.or(file.gi_budget);
        if let Some(g) = &file.extrapolation_grid {
            solver.extrapolation_grid = g.clone();
        }
        if let Some(a) = file.aggregation {
            solver.aggregation_enabled = a;
        }
        if let Some(c) = file.divergence_cap {
            solver.divergence_norm_cap = c;
        }
        solver.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let p_values = file.p_values.clone().unwrap_or_else(|| vec![1, 2]);
        if p_values.contains(&0) {
            return Err(CliError::Usage("p_values must be positive".into()));
        }
        let max_angle = file.max_angle.unwrap_or(WorkingSetPolicy::DEFAULT_MAX_ANGLE);
        if !(max_angle > 0.0 && max_angle < std::f64::consts::PI) {
            return Err(CliError::Usage("max_angle must lie in (0, pi)".into()));
        }
        Ok(RunSettings {
            solver,
            p_values,
            angle_window: file.angle_window.unwrap_or(WorkingSetPolicy::DEFAULT_WINDOW).max(1),
            max_angle,
            jobs: file.jobs,
        })
    }
}
