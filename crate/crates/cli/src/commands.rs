use crate::config::{format_policy, RunSettings};
use crate::problem::{Problem, ProblemFile, ProblemKind};
use crate::trace_csv::{read_trace, write_trace};
use crate::CliError;
use cvxfeas::{
    angle_statistics, estimate_kappa, estimate_rates, recession_residuals, solve_bap, solve_cip, solve_map, solve_sip,
    AngleStatistics, Certificate, DiagnosticsError, KappaEstimate, Origin, OutcomeKind, RateReport, SolveOutcome,
    SolveTrace, SolverConfig, TraceRecord, Vector, WorkingSetPolicy, RECESSION_PROBE,
};
use rayon::prelude::*;
use serde_json::json;
use std::fmt::Write as _;
use std::path::Path;

/// Process exit status for an outcome.
pub fn exit_code(kind: OutcomeKind) -> i32 {
    match kind {
        OutcomeKind::Feasible => 0,
        OutcomeKind::Infeasible => 2,
        OutcomeKind::Diverging => 3,
        OutcomeKind::MaxIterations => 4,
    }
}

pub fn run_solver(file: &ProblemFile, config: &SolverConfig) -> Result<(SolveOutcome, SolveTrace), CliError> {
    Ok(match &file.problem {
        Problem::Sip(p) => solve_sip(p, config)?,
        Problem::Cip(p) => solve_cip(p, config)?,
        Problem::Bap(p) => solve_bap(p, config)?,
    })
}

fn fmt_vec(v: &Vector) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn create(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::create(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}

pub fn certificate_json(certificate: &Certificate) -> serde_json::Value {
    match certificate {
        Certificate::Farkas { certificate, halfspaces } => json!({
            "type": "farkas",
            "weights": certificate.weights,
            "residual_norm": certificate.residual_norm,
            "gap": certificate.gap,
            "halfspaces": halfspaces.iter().map(|h| json!({
                "normal": h.unit_normal().iter().collect::<Vec<_>>(),
                "offset": h.unit_offset(),
                "round": h.tag().round,
                "origin": match h.tag().origin {
                    Origin::Set(l) => format!("set:{l}"),
                    Origin::Aggregate => "aggregate".to_string(),
                },
            })).collect::<Vec<_>>(),
        }),
        Certificate::ZeroSubgradient { point, value } => json!({
            "type": "zero_subgradient",
            "point": point.iter().collect::<Vec<_>>(),
            "value": value,
        }),
    }
}

pub struct SolveRequest<'a> {
    pub file: &'a ProblemFile,
    pub settings: &'a RunSettings,
    pub trace_out: Option<&'a Path>,
    pub cert_out: Option<&'a Path>,
}

/// Runs the solver, writes the requested artifacts and returns the summary
/// text and exit status.
pub fn solve(req: &SolveRequest) -> Result<(String, i32), CliError> {
    let (outcome, trace) = run_solver(req.file, &req.settings.solver)?;
    if let Some(path) = req.trace_out {
        write_trace(create(path)?, &trace.records)?;
    }
    let mut out = String::new();
    let last = trace.last().expect("traces are never empty");
    writeln!(out, "outcome: {:?}", outcome.kind()).unwrap();
    writeln!(out, "iterations: {}", outcome.iterations()).unwrap();
    writeln!(out, "policy: {}", format_policy(&req.settings.solver.policy)).unwrap();
    match &outcome {
        SolveOutcome::Feasible { point, .. } | SolveOutcome::MaxIterations { point, .. } => {
            writeln!(out, "point: {}", fmt_vec(point)).unwrap();
            writeln!(out, "max_set_distance: {:.6e}", last.max_set_distance()).unwrap();
        }
        SolveOutcome::Infeasible { certificate, .. } => {
            writeln!(out, "certificate_verified: {}", certificate.verify(req.settings.solver.qp.cert_tol)).unwrap();
            match certificate {
                Certificate::Farkas { certificate, .. } => {
                    let w: Vec<String> = certificate.weights.iter().map(|w| format!("{w:.6e}")).collect();
                    writeln!(out, "weights: [{}]", w.join(", ")).unwrap();
                    writeln!(out, "gap: {:.6e}", certificate.gap).unwrap();
                }
                Certificate::ZeroSubgradient { point, value } => {
                    writeln!(out, "zero subgradient at {} with value {value:.6e}", fmt_vec(point)).unwrap();
                }
            }
            if let Some(path) = req.cert_out {
                let text = serde_json::to_string_pretty(&certificate_json(certificate))?;
                std::fs::write(path, text + "\n")
                    .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
            }
        }
        SolveOutcome::Diverging { recession_estimate, .. } => {
            writeln!(out, "recession_direction: {}", fmt_vec(recession_estimate)).unwrap();
            if let Some(sets) = req.file.sets() {
                let residuals = recession_residuals(recession_estimate, &last.iterate, sets, RECESSION_PROBE)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                let r: Vec<String> = residuals.iter().map(|v| format!("{v:.6e}")).collect();
                writeln!(out, "recession_residuals: [{}]", r.join(", ")).unwrap();
            }
        }
    }
    Ok((out, exit_code(outcome.kind())))
}

/// Analysis of a stored trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub reference_from_file: bool,
    pub rates: Result<RateReport, DiagnosticsError>,
    pub kappa: Result<KappaEstimate, DiagnosticsError>,
    pub angles: AngleStatistics,
}

/// Normals of the cuts each non-final record would add, recomputed from the
/// problem so that stored and in-memory traces agree.
fn cut_normals(file: &ProblemFile, records: &[TraceRecord], tol: f64) -> Result<Vec<Vec<Vector>>, CliError> {
    let mut all = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        let mut normals = Vec::new();
        if k + 1 < records.len() {
            match &file.problem {
                Problem::Cip(p) => {
                    let (value, y) = p.function().evaluate(&rec.iterate);
                    if value > tol && y.norm() > 0.0 {
                        normals.push(y.normalize());
                    }
                }
                _ => {
                    for set in file.sets().expect("set problems have sets") {
                        let p = set.project(&rec.iterate).map_err(|e| CliError::Usage(e.to_string()))?;
                        if p.distance > tol {
                            normals.push(p.offset.normalize());
                        }
                    }
                }
            }
        }
        all.push(normals);
    }
    Ok(all)
}

pub fn diagnose_records(
    file: &ProblemFile,
    records: Vec<TraceRecord>,
    settings: &RunSettings,
) -> Result<Diagnosis, CliError> {
    let last = records.last().ok_or_else(|| CliError::Usage("trace has no records".into()))?;
    if last.iterate.len() != file.dimension || last.per_set_distances.len() != file.distance_count() {
        return Err(CliError::Usage("trace does not match the problem dimensions".into()));
    }
    let reference = file.known_solution.clone().unwrap_or_else(|| last.iterate.clone());
    let normals = cut_normals(file, &records, settings.solver.tol_feas)?;
    let outcome = if last.max_set_distance() <= settings.solver.tol_feas {
        OutcomeKind::Feasible
    } else {
        OutcomeKind::MaxIterations
    };
    let trace = SolveTrace { records, outcome };
    Ok(Diagnosis {
        reference_from_file: file.known_solution.is_some(),
        rates: estimate_rates(&trace, &reference, &settings.p_values),
        kappa: estimate_kappa(&trace, &reference),
        angles: angle_statistics(&normals, settings.angle_window, settings.max_angle),
    })
}

pub fn diagnose_file(file: &ProblemFile, trace: &Path, settings: &RunSettings) -> Result<Diagnosis, CliError> {
    let input = std::fs::File::open(trace).map_err(|e| CliError::Io { path: trace.display().to_string(), source: e })?;
    diagnose_records(file, read_trace(input)?, settings)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(" ")
}

pub fn render_diagnosis(d: &Diagnosis) -> String {
    let mut out = String::new();
    let source = if d.reference_from_file { "known_solution" } else { "final iterate" };
    match &d.rates {
        Ok(r) => {
            writeln!(out, "reference ({source}): {}", fmt_vec(&r.reference_point)).unwrap();
            writeln!(out, "classification: {}", r.classification).unwrap();
            writeln!(out, "usable iterations: {} of {}", r.usable, r.errors.len()).unwrap();
            writeln!(out, "errors: {}", join(&r.errors[..r.usable])).unwrap();
            writeln!(out, "q ratios: {}", join(&r.q_ratios)).unwrap();
            for (p, ratios) in &r.superlinear_ratios {
                writeln!(out, "superlinear ratios p={p}: {}", join(ratios)).unwrap();
            }
            for (p, ratios) in &r.quadratic_ratios {
                writeln!(out, "quadratic ratios p={p}: {}", join(ratios)).unwrap();
            }
        }
        Err(e) => writeln!(out, "classification: unavailable ({e})").unwrap(),
    }
    match &d.kappa {
        Ok(k) => {
            let ratios: Vec<f64> = k.ratios.iter().map(|(_, r)| *r).collect();
            writeln!(out, "kappa ratios: {}", join(&ratios)).unwrap();
            writeln!(out, "kappa tail max: {:.6e}", k.tail_max).unwrap();
        }
        Err(e) => writeln!(out, "kappa: unavailable ({e})").unwrap(),
    }
    let mins: Vec<String> =
        d.angles.per_window_min.iter().map(|m| m.map_or("-".to_string(), |a| format!("{a:.6e}"))).collect();
    writeln!(out, "window min angles: {}", mins.join(" ")).unwrap();
    match d.angles.first_round_within {
        Some(i) => writeln!(out, "first round with a pair within the pruning angle: {i}").unwrap(),
        None => writeln!(out, "first round with a pair within the pruning angle: none").unwrap(),
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Policy(WorkingSetPolicy),
    Aggregated(WorkingSetPolicy),
    Map,
}

impl Method {
    pub fn label(&self, kind: ProblemKind) -> String {
        let prefix = match kind {
            ProblemKind::Sip => "shqp",
            ProblemKind::Cip => "sgqp",
            ProblemKind::Bap => "bap",
        };
        match self {
            Method::Policy(p) => format!("{prefix}/{}", format_policy(p)),
            Method::Aggregated(p) => format!("{prefix}/{}+aggregate", format_policy(p)),
            Method::Map => "map".to_string(),
        }
    }
}

/// The comparison matrix for one problem kind. `policies` replaces the
/// default policy list when non-empty.
pub fn bench_methods(kind: ProblemKind, policies: &[WorkingSetPolicy]) -> Vec<Method> {
    let defaults = match kind {
        ProblemKind::Bap => vec![WorkingSetPolicy::AllAccumulating, WorkingSetPolicy::default()],
        _ => vec![
            WorkingSetPolicy::CurrentRoundOnly,
            WorkingSetPolicy::LastRounds { window: 1 },
            WorkingSetPolicy::default(),
            WorkingSetPolicy::AllAccumulating,
            WorkingSetPolicy::AnglePruned {
                max_angle: WorkingSetPolicy::DEFAULT_MAX_ANGLE,
                window: WorkingSetPolicy::DEFAULT_WINDOW,
            },
        ],
    };
    let chosen = if policies.is_empty() { defaults } else { policies.to_vec() };
    let mut methods: Vec<Method> = chosen.iter().map(|p| Method::Policy(*p)).collect();
    match kind {
        ProblemKind::Sip => methods.push(Method::Map),
        ProblemKind::Bap => methods.extend(chosen.iter().map(|p| Method::Aggregated(*p))),
        ProblemKind::Cip => {}
    }
    methods
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub id: usize,
    pub problem: String,
    pub method: String,
    pub outcome: OutcomeKind,
    pub iterations: usize,
    /// Iteration count when the final residual is exactly zero.
    pub exact_at: Option<usize>,
    pub final_residual: f64,
    pub rate: String,
}

fn bench_one(id: usize, name: &str, file: &ProblemFile, method: Method, settings: &RunSettings) -> Result<BenchRow, CliError> {
    let mut config = settings.solver.clone();
    let (outcome, trace) = match method {
        Method::Map => match &file.problem {
            Problem::Sip(p) => solve_map(p, &config)?,
            _ => return Err(CliError::Usage("map applies to sip problems only".into())),
        },
        Method::Policy(p) | Method::Aggregated(p) => {
            config.policy = p;
            config.aggregation_enabled = matches!(method, Method::Aggregated(_));
            run_solver(file, &config)?
        }
    };
    let last = trace.last().expect("traces are never empty");
    let reference = file.known_solution.clone().unwrap_or_else(|| last.iterate.clone());
    let rate = match estimate_rates(&trace, &reference, &settings.p_values) {
        Ok(r) => r.classification.to_string(),
        Err(DiagnosticsError::TooFewIterations { .. }) => "insufficient data".to_string(),
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let final_residual = last.max_set_distance();
    Ok(BenchRow {
        id,
        problem: name.to_string(),
        method: method.label(file.kind()),
        outcome: outcome.kind(),
        iterations: outcome.iterations(),
        exact_at: (final_residual == 0.0).then_some(outcome.iterations()),
        final_residual,
        rate,
    })
}

/// Runs every method on every problem. Rows come back ordered by id
/// whatever the number of worker threads.
pub fn bench(
    files: &[(String, ProblemFile)],
    policies: &[WorkingSetPolicy],
    settings: &RunSettings,
) -> Result<Vec<BenchRow>, CliError> {
    let mut jobs = Vec::new();
    for (name, file) in files {
        for method in bench_methods(file.kind(), policies) {
            jobs.push((jobs.len(), name.as_str(), file, method));
        }
    }
    let run = || -> Vec<Result<BenchRow, CliError>> {
        jobs.par_iter().map(|(id, name, file, method)| bench_one(*id, name, file, *method, settings)).collect()
    };
    let results = match settings.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(run),
        None => run(),
    };
    results.into_iter().collect()
}

pub const BENCH_COLUMNS: [&str; 8] =
    ["id", "problem", "method", "outcome", "iterations", "exact_at", "final_residual", "rate"];

fn bench_cells(row: &BenchRow) -> [String; 8] {
    [
        row.id.to_string(),
        row.problem.clone(),
        row.method.clone(),
        format!("{:?}", row.outcome),
        row.iterations.to_string(),
        row.exact_at.map_or("-".to_string(), |k| k.to_string()),
        format!("{:.3e}", row.final_residual),
        row.rate.clone(),
    ]
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let cells: Vec<[String; 8]> = rows.iter().map(bench_cells).collect();
    let mut widths = BENCH_COLUMNS.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, items: &[&str]| {
        let padded: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(&mut out, &BENCH_COLUMNS);
    for c in &cells {
        line(&mut out, &c.each_ref().map(String::as_str));
    }
    out
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(BENCH_COLUMNS)?;
    for row in rows {
        let mut cells = bench_cells(row);
        cells[6] = format!("{:.16e}", row.final_residual);
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}
