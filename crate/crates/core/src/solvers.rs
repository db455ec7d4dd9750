//! Outer loops for set intersection, convex inequalities and best
//! approximation, plus a cyclic-projection baseline.
//!
//! Every solver returns the outcome together with a [`SolveTrace`] holding one
//! [`TraceRecord`] per round evaluated. The final record describes the point
//! at which the run stopped, so `records.len() == iterations + 1`.

use crate::functions::ConvexFunction;
use crate::geometry::{cut_from_evaluation, halfspace_from_projection, project, ConvexSet, GeometryError, ProjectionResult};
use crate::halfspace::{aggregate, HalfspaceError, HalfspaceStore, HalfspaceTag, Origin, TaggedHalfspace, WorkingSetPolicy};
use crate::qp::{
    check_farkas_system, gi_resume, gi_solve, gi_warm_start, FarkasCertificate, GiOutcome, GiState, QpError, QpOptions,
    QpProblem,
};
use crate::{all_finite, Vector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid problem: {0}")]
    ProblemInvalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Halfspace(#[from] HalfspaceError),
}

fn check_start(start: &Vector, n: usize, what: &str) -> Result<(), SolverError> {
    if start.len() != n {
        return Err(SolverError::ProblemInvalid(format!("{what} has dimension {}, expected {n}", start.len())));
    }
    if !all_finite(start) {
        return Err(SolverError::ProblemInvalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn check_sets(sets: &[ConvexSet]) -> Result<usize, SolverError> {
    let n = sets.first().ok_or_else(|| SolverError::ProblemInvalid("at least one set is required".into()))?.dim();
    if let Some((l, s)) = sets.iter().enumerate().find(|(_, s)| s.dim() != n) {
        return Err(SolverError::ProblemInvalid(format!("set {l} has dimension {}, expected {n}", s.dim())));
    }
    Ok(n)
}

/// Find a point in the intersection of `sets`, starting from `start`.
#[derive(Debug, Clone)]
pub struct SipProblem {
    sets: Vec<ConvexSet>,
    start: Vector,
}

impl SipProblem {
    pub fn new(sets: Vec<ConvexSet>, start: Vector) -> Result<Self, SolverError> {
        let n = check_sets(&sets)?;
        check_start(&start, n, "start")?;
        Ok(SipProblem { sets, start })
    }

    pub fn sets(&self) -> &[ConvexSet] {
        &self.sets
    }

    pub fn start(&self) -> &Vector {
        &self.start
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }
}

/// Find `x` with `f(x) <= 0`, starting from `start`.
#[derive(Clone)]
pub struct CipProblem {
    f: Arc<dyn ConvexFunction>,
    start: Vector,
}

impl std::fmt::Debug for CipProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CipProblem").field("dim", &self.f.dim()).field("start", &self.start).finish()
    }
}

impl CipProblem {
    pub fn new(f: Arc<dyn ConvexFunction>, start: Vector) -> Result<Self, SolverError> {
        check_start(&start, f.dim(), "start")?;
        Ok(CipProblem { f, start })
    }

    pub fn function(&self) -> &dyn ConvexFunction {
        self.f.as_ref()
    }

    pub fn start(&self) -> &Vector {
        &self.start
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }
}

/// Find the point of the intersection of `sets` nearest to `anchor`.
#[derive(Debug, Clone)]
pub struct BapProblem {
    sets: Vec<ConvexSet>,
    anchor: Vector,
}

impl BapProblem {
    pub fn new(sets: Vec<ConvexSet>, anchor: Vector) -> Result<Self, SolverError> {
        let n = check_sets(&sets)?;
        check_start(&anchor, n, "anchor")?;
        Ok(BapProblem { sets, anchor })
    }

    pub fn sets(&self) -> &[ConvexSet] {
        &self.sets
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub policy: WorkingSetPolicy,
    /// Stop when every set distance (or `f`) is at most this.
    pub tol_feas: f64,
    /// Maximum number of outer rounds.
    pub max_outer: usize,
    /// Inner QP add cycles per attempt; `None` projects exactly.
    pub gi_step_budget: Option<usize>,
    /// Step multipliers tried on partial QP solutions, largest first.
    pub extrapolation_grid: Vec<f64>,
    /// Fold old constraints into one dual-weighted halfspace (best
    /// approximation only).
    pub aggregation_enabled: bool,
    /// Under `AllAccumulating`, declare divergence once `|x|` (or `|x - x0|`
    /// for best approximation) exceeds this.
    pub divergence_norm_cap: f64,
    pub qp: QpOptions,
    /// Store each round's working set and multipliers in the trace.
    pub record_working_sets: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            policy: WorkingSetPolicy::default(),
            tol_feas: crate::DEFAULT_TOL_FEAS,
            max_outer: 1000,
            gi_step_budget: None,
            extrapolation_grid: vec![2.0, 1.5, 1.0],
            aggregation_enabled: false,
            divergence_norm_cap: 1e8,
            qp: QpOptions::default(),
            record_working_sets: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::ConfigInvalid(msg.into()));
        if !(self.tol_feas > 0.0 && self.tol_feas.is_finite()) {
            return bad("tol_feas must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1");
        }
        if self.gi_step_budget == Some(0) {
            return bad("gi_step_budget must be at least 1");
        }
        if self.extrapolation_grid.is_empty() {
            return bad("extrapolation_grid must not be empty");
        }
        if self.extrapolation_grid.iter().any(|t| !(1.0..=2.0).contains(t)) {
            return bad("extrapolation_grid entries must lie in [1, 2]");
        }
        if self.divergence_norm_cap.is_nan() || self.divergence_norm_cap <= 0.0 {
            return bad("divergence_norm_cap must be positive");
        }
        let q = &self.qp;
        if [q.dual_tol, q.feas_tol, q.rank_tol, q.cert_tol].iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("QP tolerances must be positive");
        }
        if let WorkingSetPolicy::AnglePruned { max_angle, .. } = self.policy {
            if !(max_angle > 0.0 && max_angle < std::f64::consts::PI) {
                return bad("pruning angle must lie in (0, pi)");
            }
        }
        Ok(())
    }
}

/// Evidence that a run cannot reach a feasible point.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// `weights` combine the unit-normalized `halfspaces` into `0' x <= gap < 0`.
    Farkas { certificate: FarkasCertificate, halfspaces: Vec<TaggedHalfspace> },
    /// `0 ∈ ∂f(point)` while `f(point) = value > 0`, so `f > 0` everywhere.
    ZeroSubgradient { point: Vector, value: f64 },
}

impl Certificate {
    /// Re-checks the certificate from its own data.
    pub fn verify(&self, cert_tol: f64) -> bool {
        match self {
            Certificate::Farkas { certificate, halfspaces } => {
                let normals: Vec<Vector> = halfspaces.iter().map(|h| h.unit_normal().clone()).collect();
                let offsets: Vec<f64> = halfspaces.iter().map(|h| h.unit_offset()).collect();
                check_farkas_system(certificate, &normals, &offsets, cert_tol)
            }
            Certificate::ZeroSubgradient { value, .. } => *value > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    Feasible,
    Infeasible,
    Diverging,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Feasible { point: Vector, iterations: usize },
    Infeasible { certificate: Certificate, iterations: usize },
    Diverging { recession_estimate: Vector, iterations: usize },
    MaxIterations { point: Vector, iterations: usize },
}

impl SolveOutcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            SolveOutcome::Feasible { .. } => OutcomeKind::Feasible,
            SolveOutcome::Infeasible { .. } => OutcomeKind::Infeasible,
            SolveOutcome::Diverging { .. } => OutcomeKind::Diverging,
            SolveOutcome::MaxIterations { .. } => OutcomeKind::MaxIterations,
        }
    }

    /// Number of updates performed.
    pub fn iterations(&self) -> usize {
        match *self {
            SolveOutcome::Feasible { iterations, .. }
            | SolveOutcome::Infeasible { iterations, .. }
            | SolveOutcome::Diverging { iterations, .. }
            | SolveOutcome::MaxIterations { iterations, .. } => iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Iterate at the start of the round.
    pub iterate: Vector,
    /// Distance from `iterate` to each set; `[max(f, 0)]` for inequalities.
    pub per_set_distances: Vec<f64>,
    /// Lowest-index set at maximal distance.
    pub l_star: usize,
    pub working_set_size: usize,
    pub qp_steps_used: usize,
    pub halfspaces_added: usize,
    /// `|x_{i+1} - x_i|`; zero in the final record.
    pub step_norm: f64,
    /// Unit normals of the halfspaces generated this round.
    pub new_normals: Vec<Vector>,
    /// Working set of the round's projection (only with `record_working_sets`).
    pub working_set: Vec<TaggedHalfspace>,
    /// Multipliers of `working_set` (unit-normalized), same order.
    pub duals: Vec<f64>,
}

impl TraceRecord {
    fn new(iteration: usize, iterate: Vector, per_set_distances: Vec<f64>, l_star: usize) -> Self {
        TraceRecord {
            iteration,
            iterate,
            per_set_distances,
            l_star,
            working_set_size: 0,
            qp_steps_used: 0,
            halfspaces_added: 0,
            step_norm: 0.0,
            new_normals: Vec::new(),
            working_set: Vec::new(),
            duals: Vec::new(),
        }
    }

    pub fn max_set_distance(&self) -> f64 {
        self.per_set_distances.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub outcome: OutcomeKind,
}

impl SolveTrace {
    pub fn iterates(&self) -> impl Iterator<Item = &Vector> {
        self.records.iter().map(|r| &r.iterate)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AcceptOutcome {
    Accepted { point: Vector, t: f64 },
    NeedMoreQpSteps,
}

/// Tries `x + t (x̃ - x)` for `t` in `grid`, largest first, where `x̃` is the
/// primal of a partial QP solve; accepts the first point lying in every
/// working halfspace within `tol`.
pub fn step_accept(x: &Vector, state: &GiState, working: &[TaggedHalfspace], grid: &[f64], tol: f64) -> AcceptOutcome {
    let dir = state.primal() - x;
    let mut ts = grid.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    for t in ts {
        let z = x + &dir * t;
        if working.iter().all(|h| h.contains(&z, tol)) {
            return AcceptOutcome::Accepted { point: z, t };
        }
    }
    AcceptOutcome::NeedMoreQpSteps
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn unit_qp(anchor: Vector, working: &[TaggedHalfspace]) -> Result<QpProblem, QpError> {
    QpProblem::new(
        anchor,
        working.iter().map(|h| h.unit_normal().clone()).collect(),
        working.iter().map(|h| h.unit_offset()).collect(),
    )
}

fn farkas(certificate: FarkasCertificate, working: &[TaggedHalfspace]) -> Certificate {
    Certificate::Farkas { certificate, halfspaces: working.to_vec() }
}

enum Step {
    Moved { point: Vector, qp_steps: usize, duals: Vec<f64> },
    Empty(Certificate),
}

/// Moves `x` towards the polyhedron of `working`: the exact projection, or
/// with a step budget an accepted extrapolation of a partial solve.
fn polyhedral_step(x: &Vector, working: &[TaggedHalfspace], config: &SolverConfig) -> Result<Step, SolverError> {
    let qp = unit_qp(x.clone(), working)?;
    let Some(budget) = config.gi_step_budget else {
        let mut opts = config.qp;
        opts.step_budget = None;
        return Ok(match gi_solve(&qp, &opts)? {
            GiOutcome::Solved(s) => {
                Step::Moved { point: s.primal().clone(), qp_steps: s.steps(), duals: s.full_duals(qp.len()) }
            }
            GiOutcome::Infeasible(c) => Step::Empty(farkas(c, working)),
            GiOutcome::BudgetExhausted(_) => unreachable!("no step budget"),
        });
    };
    let mut opts = config.qp;
    opts.step_budget = Some(budget);
    let mut state = GiState::initial(&qp);
    loop {
        let (s, solved) = match gi_resume(state, &qp, &opts)? {
            GiOutcome::Infeasible(c) => return Ok(Step::Empty(farkas(c, working))),
            GiOutcome::Solved(s) => (s, true),
            GiOutcome::BudgetExhausted(s) => (s, false),
        };
        match step_accept(x, &s, working, &config.extrapolation_grid, config.tol_feas) {
            AcceptOutcome::Accepted { point, .. } => {
                return Ok(Step::Moved { point, qp_steps: s.steps(), duals: s.full_duals(qp.len()) });
            }
            AcceptOutcome::NeedMoreQpSteps if solved => {
                // Only skipped, marginally violated constraints can block the
                // exact projection; take it as is.
                return Ok(Step::Moved { point: s.primal().clone(), qp_steps: s.steps(), duals: s.full_duals(qp.len()) });
            }
            AcceptOutcome::NeedMoreQpSteps => state = s,
        }
    }
}

fn project_all(sets: &[ConvexSet], x: &Vector) -> Result<Vec<ProjectionResult>, SolverError> {
    sets.iter().map(|s| project(s, x).map_err(SolverError::from)).collect()
}

fn finish(records: Vec<TraceRecord>, outcome: SolveOutcome) -> (SolveOutcome, SolveTrace) {
    let trace = SolveTrace { records, outcome: outcome.kind() };
    (outcome, trace)
}

/// Adds the supporting halfspaces of every set not yet within tolerance.
fn add_cuts(
    store: &mut HalfspaceStore,
    projections: &[ProjectionResult],
    round: usize,
    tol: f64,
    record: &mut TraceRecord,
) -> Result<(), SolverError> {
    for (l, p) in projections.iter().enumerate() {
        if p.distance > tol {
            let h = halfspace_from_projection(p, HalfspaceTag::new(round, l), tol)?;
            record.new_normals.push(h.unit_normal().clone());
            store.push(h)?;
            record.halfspaces_added += 1;
        }
    }
    Ok(())
}

fn record_working(record: &mut TraceRecord, config: &SolverConfig, working: &[TaggedHalfspace], duals: Vec<f64>) {
    record.working_set_size = working.len();
    if config.record_working_sets {
        record.working_set = working.to_vec();
        record.duals = duals;
    }
}

/// Supporting-halfspace method for the set intersection problem.
pub fn solve_sip(problem: &SipProblem, config: &SolverConfig) -> Result<(SolveOutcome, SolveTrace), SolverError> {
    config.validate()?;
    let mut x = problem.start.clone();
    let mut store = HalfspaceStore::new(config.policy);
    let mut records = Vec::new();
    for i in 0..=config.max_outer {
        let projections = project_all(&problem.sets, &x)?;
        let distances: Vec<f64> = projections.iter().map(|p| p.distance).collect();
        let l_star = argmax_lowest(&distances);
        let mut record = TraceRecord::new(i, x.clone(), distances, l_star);
        if record.max_set_distance() <= config.tol_feas {
            records.push(record);
            return Ok(finish(records, SolveOutcome::Feasible { point: x, iterations: i }));
        }
        if config.policy == WorkingSetPolicy::AllAccumulating && x.norm() > config.divergence_norm_cap {
            records.push(record);
            let recession_estimate = x.normalize();
            return Ok(finish(records, SolveOutcome::Diverging { recession_estimate, iterations: i }));
        }
        if i == config.max_outer {
            records.push(record);
            return Ok(finish(records, SolveOutcome::MaxIterations { point: x, iterations: i }));
        }
        add_cuts(&mut store, &projections, i, config.tol_feas, &mut record)?;
        let working = store.select_working_set(i, l_star)?;
        match polyhedral_step(&x, &working, config)? {
            Step::Empty(certificate) => {
                record_working(&mut record, config, &working, Vec::new());
                records.push(record);
                return Ok(finish(records, SolveOutcome::Infeasible { certificate, iterations: i }));
            }
            Step::Moved { point, qp_steps, duals } => {
                record_working(&mut record, config, &working, duals);
                record.qp_steps_used = qp_steps;
                record.step_norm = (&point - &x).norm();
                records.push(record);
                x = point;
            }
        }
    }
    unreachable!("loop returns at max_outer")
}

/// Subgradient-halfspace method for a convex inequality.
pub fn solve_cip(problem: &CipProblem, config: &SolverConfig) -> Result<(SolveOutcome, SolveTrace), SolverError> {
    config.validate()?;
    let f = problem.f.as_ref();
    let mut x = problem.start.clone();
    let mut store = HalfspaceStore::new(config.policy);
    let mut records = Vec::new();
    let closed_form = config.policy == WorkingSetPolicy::CurrentRoundOnly && config.gi_step_budget.is_none();
    for i in 0..=config.max_outer {
        let (value, y) = f.evaluate(&x);
        if !value.is_finite() || !all_finite(&y) {
            return Err(SolverError::ProblemInvalid(format!("function oracle returned non-finite data at round {i}")));
        }
        let mut record = TraceRecord::new(i, x.clone(), vec![value.max(0.0)], 0);
        if value <= config.tol_feas {
            records.push(record);
            return Ok(finish(records, SolveOutcome::Feasible { point: x, iterations: i }));
        }
        if i == config.max_outer {
            records.push(record);
            return Ok(finish(records, SolveOutcome::MaxIterations { point: x, iterations: i }));
        }
        let cut = match cut_from_evaluation(&x, value, &y, i) {
            Ok(h) => h,
            Err(GeometryError::ZeroSubgradientAtPositiveValue { value }) => {
                records.push(record);
                let certificate = Certificate::ZeroSubgradient { point: x, value };
                return Ok(finish(records, SolveOutcome::Infeasible { certificate, iterations: i }));
            }
            Err(e) => return Err(e.into()),
        };
        record.new_normals.push(cut.unit_normal().clone());
        record.halfspaces_added = 1;
        store.push(cut)?;
        let working = store.select_working_set(i, 0)?;
        if closed_form {
            let point = &x - &y * (value / y.norm_squared());
            record_working(&mut record, config, &working, vec![value / y.norm()]);
            record.step_norm = (&point - &x).norm();
            records.push(record);
            x = point;
            continue;
        }
        match polyhedral_step(&x, &working, config)? {
            Step::Empty(certificate) => {
                record_working(&mut record, config, &working, Vec::new());
                records.push(record);
                return Ok(finish(records, SolveOutcome::Infeasible { certificate, iterations: i }));
            }
            Step::Moved { point, qp_steps, duals } => {
                record_working(&mut record, config, &working, duals);
                record.qp_steps_used = qp_steps;
                record.step_norm = (&point - &x).norm();
                records.push(record);
                x = point;
            }
        }
    }
    unreachable!("loop returns at max_outer")
}

/// Replaces every halfspace older than the last two rounds by one
/// combination weighted with the current multipliers, so that `point` stays
/// the projection of the anchor onto the stored polyhedron. Constraints with
/// zero multiplier are dropped.
fn aggregate_old(store: &mut HalfspaceStore, round: usize, store_duals: &[f64]) -> Result<(), SolverError> {
    if round < 2 {
        return Ok(());
    }
    let cutoff = round - 2;
    let mut old = Vec::new();
    let mut weights = Vec::new();
    let mut any_old = false;
    for (h, &u) in store.items().iter().zip(store_duals) {
        if h.tag().round <= cutoff {
            any_old = true;
            if u > 0.0 {
                // Multipliers refer to unit normals.
                weights.push(u / h.normal().norm());
                old.push(h.clone());
            }
        }
    }
    if !any_old {
        return Ok(());
    }
    let combined = if old.is_empty() {
        None
    } else {
        match aggregate(&old, &weights, HalfspaceTag { round: cutoff, origin: Origin::Aggregate }) {
            Ok(h) => Some(h),
            // The old multipliers cancel; keep the constraints as they are.
            Err(HalfspaceError::ZeroAggregateNormal { .. }) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    };
    store.retain(|h| h.tag().round > cutoff);
    if let Some(h) = combined {
        store.push_front(h)?;
    }
    Ok(())
}

/// Best approximation: each round projects the anchor onto the polyhedron of
/// the working set.
pub fn solve_bap(problem: &BapProblem, config: &SolverConfig) -> Result<(SolveOutcome, SolveTrace), SolverError> {
    config.validate()?;
    let x0 = &problem.anchor;
    let mut x = x0.clone();
    let mut store = HalfspaceStore::new(config.policy);
    let mut records = Vec::new();
    let warm = config.policy == WorkingSetPolicy::AllAccumulating && !config.aggregation_enabled;
    let mut opts = config.qp;
    opts.step_budget = None;
    let mut warm_qp = QpProblem::unconstrained(x0.clone())?;
    let mut warm_state = GiState::initial(&warm_qp);

    for i in 0..=config.max_outer {
        let projections = project_all(&problem.sets, &x)?;
        let distances: Vec<f64> = projections.iter().map(|p| p.distance).collect();
        let l_star = argmax_lowest(&distances);
        let mut record = TraceRecord::new(i, x.clone(), distances, l_star);
        if record.max_set_distance() <= config.tol_feas {
            records.push(record);
            return Ok(finish(records, SolveOutcome::Feasible { point: x, iterations: i }));
        }
        let displacement = &x - x0;
        if config.policy == WorkingSetPolicy::AllAccumulating && displacement.norm() > config.divergence_norm_cap {
            records.push(record);
            let recession_estimate = displacement.normalize();
            return Ok(finish(records, SolveOutcome::Diverging { recession_estimate, iterations: i }));
        }
        if i == config.max_outer {
            records.push(record);
            return Ok(finish(records, SolveOutcome::MaxIterations { point: x, iterations: i }));
        }
        add_cuts(&mut store, &projections, i, config.tol_feas, &mut record)?;
        let indices = store.working_indices(i, l_star)?;
        let working: Vec<TaggedHalfspace> = indices.iter().map(|&k| store.items()[k].clone()).collect();

        let (outcome, steps_before) = if warm {
            let fresh = store.items()[warm_qp.len()..]
                .iter()
                .map(|h| (h.unit_normal().clone(), h.unit_offset()))
                .collect();
            let state = std::mem::replace(&mut warm_state, GiState::initial(&warm_qp));
            let state = gi_warm_start(state, &mut warm_qp, fresh)?;
            let before = state.steps();
            (gi_resume(state, &warm_qp, &opts)?, before)
        } else {
            (gi_solve(&unit_qp(x0.clone(), &working)?, &opts)?, 0)
        };
        let state = match outcome {
            GiOutcome::Solved(s) => s,
            GiOutcome::Infeasible(c) => {
                record_working(&mut record, config, &working, Vec::new());
                records.push(record);
                let certificate = farkas(c, &working);
                return Ok(finish(records, SolveOutcome::Infeasible { certificate, iterations: i }));
            }
            GiOutcome::BudgetExhausted(_) => unreachable!("no step budget"),
        };
        let duals = state.full_duals(working.len());
        record.qp_steps_used = state.steps() - steps_before;
        let point = state.primal().clone();
        if warm {
            warm_state = state;
        }
        if config.aggregation_enabled {
            let mut store_duals = vec![0.0; store.len()];
            for (&k, &u) in indices.iter().zip(&duals) {
                store_duals[k] = u;
            }
            aggregate_old(&mut store, i, &store_duals)?;
        }
        record_working(&mut record, config, &working, duals);
        record.step_norm = (&point - &x).norm();
        records.push(record);
        x = point;
    }
    unreachable!("loop returns at max_outer")
}

/// Cyclic projections `x <- P_r(... P_1(x))`; one record per sweep. Never
/// detects infeasibility.
pub fn solve_map(problem: &SipProblem, config: &SolverConfig) -> Result<(SolveOutcome, SolveTrace), SolverError> {
    config.validate()?;
    let mut x = problem.start.clone();
    let mut records = Vec::new();
    for i in 0..=config.max_outer {
        let distances: Vec<f64> = problem.sets.iter().map(|s| s.distance(&x)).collect::<Result<_, _>>()?;
        let l_star = argmax_lowest(&distances);
        let mut record = TraceRecord::new(i, x.clone(), distances, l_star);
        if record.max_set_distance() <= config.tol_feas {
            records.push(record);
            return Ok(finish(records, SolveOutcome::Feasible { point: x, iterations: i }));
        }
        if i == config.max_outer {
            records.push(record);
            return Ok(finish(records, SolveOutcome::MaxIterations { point: x, iterations: i }));
        }
        let mut next = x.clone();
        for set in &problem.sets {
            next = project(set, &next)?.point;
        }
        record.step_norm = (&next - &x).norm();
        records.push(record);
        x = next;
    }
    unreachable!("loop returns at max_outer")
}
