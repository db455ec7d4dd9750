//! Dual active-set (Goldfarb–Idnani) solver for least-distance QPs
//!
//! ```text
//!     minimize   1/2 |x - y|^2
//!     subject to c_j' x <= b_j,   j = 1..m
//! ```
//!
//! i.e. the Euclidean projection of the anchor `y` onto a polyhedron. The
//! Hessian is the identity, so the factorization kept by the method reduces to
//! an orthogonal-triangular decomposition `N = Q [R; 0]` of the active normals.
//!
//! The solver starts from `x = y` with an empty active set and repeatedly adds
//! the most violated constraint, dropping active constraints whose multiplier
//! would turn negative. Between cycles the primal iterate is always the
//! projection of `y` onto the polyhedron of the active constraints, so every
//! intermediate [`GiState`] is a usable partial solve. When a violated
//! constraint's normal lies in the cone spanned by the negated active normals,
//! no step can reduce its violation and a [`FarkasCertificate`] is returned.

use crate::{all_finite, Vector};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("constraint {index} has a zero or non-finite normal or offset")]
    InvalidConstraint { index: usize },
    #[error("anchor must be a nonempty vector of finite entries")]
    InvalidAnchor,
    #[error("constraint set is numerically degenerate: {0}")]
    DegenerateConstraintSet(String),
}

/// Projection of `anchor` onto `{x : normals[j]' x <= offsets[j]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    anchor: Vector,
    normals: Vec<Vector>,
    offsets: Vec<f64>,
}

impl QpProblem {
    pub fn new(anchor: Vector, normals: Vec<Vector>, offsets: Vec<f64>) -> Result<Self, QpError> {
        if anchor.is_empty() || !all_finite(&anchor) {
            return Err(QpError::InvalidAnchor);
        }
        if normals.len() != offsets.len() {
            return Err(QpError::DimensionMismatch { expected: normals.len(), found: offsets.len() });
        }
        let mut problem = QpProblem { anchor, normals: Vec::with_capacity(normals.len()), offsets: Vec::new() };
        for (c, b) in normals.into_iter().zip(offsets) {
            problem.push(c, b)?;
        }
        Ok(problem)
    }

    pub fn unconstrained(anchor: Vector) -> Result<Self, QpError> {
        Self::new(anchor, Vec::new(), Vec::new())
    }

    /// Appends the constraint `normal' x <= offset`.
    pub fn push(&mut self, normal: Vector, offset: f64) -> Result<(), QpError> {
        let index = self.normals.len();
        if normal.len() != self.dim() {
            return Err(QpError::DimensionMismatch { expected: self.dim(), found: normal.len() });
        }
        if !all_finite(&normal) || !offset.is_finite() || normal.norm() == 0.0 {
            return Err(QpError::InvalidConstraint { index });
        }
        self.normals.push(normal);
        self.offsets.push(offset);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn normals(&self) -> &[Vector] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `c_j' x - b_j`; positive when `x` violates constraint `j`.
    pub fn violation(&self, j: usize, x: &Vector) -> f64 {
        self.normals[j].dot(x) - self.offsets[j]
    }

    /// Violation divided by `|c_j|`, the signed distance to the boundary.
    pub fn scaled_violation(&self, j: usize, x: &Vector) -> f64 {
        self.violation(j, x) / self.normals[j].norm()
    }

    /// Largest scaled violation over all constraints (0 when none).
    pub fn max_scaled_violation(&self, x: &Vector) -> f64 {
        (0..self.len()).map(|j| self.scaled_violation(j, x)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Maximum number of add cycles per call; `None` solves to optimality.
    pub step_budget: Option<usize>,
    /// Threshold below which a dual-direction component counts as zero.
    pub dual_tol: f64,
    /// A constraint is violated when its scaled violation exceeds this.
    pub feas_tol: f64,
    /// A new column is dependent when its orthogonal residual is at most
    /// `rank_tol * |column|`.
    pub rank_tol: f64,
    /// Tolerance used when emitting certificates.
    pub cert_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { step_budget: None, dual_tol: 1e-12, feas_tol: 1e-11, rank_tol: 1e-10, cert_tol: 1e-8 }
    }
}

/// Nonnegative weights `r` with `sum r_j c_j ≈ 0` and `sum r_j b_j < 0`,
/// proving that `C' x <= b` has no solution.
#[derive(Debug, Clone, PartialEq)]
pub struct FarkasCertificate {
    /// One weight per constraint of the problem it was computed for.
    pub weights: Vec<f64>,
    /// `|sum r_j c_j|`.
    pub residual_norm: f64,
    /// `sum r_j b_j`.
    pub gap: f64,
}

impl FarkasCertificate {
    /// Builds a certificate from explicit weights, evaluating residual and gap
    /// against `normals`/`offsets`.
    pub fn from_weights(weights: Vec<f64>, normals: &[Vector], offsets: &[f64]) -> Self {
        let (residual_norm, gap) = residual_and_gap(&weights, normals, offsets);
        FarkasCertificate { weights, residual_norm, gap }
    }
}

fn residual_and_gap(weights: &[f64], normals: &[Vector], offsets: &[f64]) -> (f64, f64) {
    let n = normals.first().map_or(0, |c| c.len());
    let mut combo = Vector::zeros(n);
    let mut gap = 0.0;
    for ((w, c), b) in weights.iter().zip(normals).zip(offsets) {
        if *w != 0.0 {
            combo.axpy(*w, c, 1.0);
            gap += w * b;
        }
    }
    (combo.norm(), gap)
}

/// Verifies a certificate against a constraint system without any solver
/// state. Residual and gap are recomputed from the problem data.
pub fn check_farkas(cert: &FarkasCertificate, problem: &QpProblem, cert_tol: f64) -> bool {
    check_farkas_system(cert, problem.normals(), problem.offsets(), cert_tol)
}

/// [`check_farkas`] for a bare constraint list.
pub fn check_farkas_system(cert: &FarkasCertificate, normals: &[Vector], offsets: &[f64], cert_tol: f64) -> bool {
    if cert.weights.len() != normals.len() || normals.len() != offsets.len() || normals.is_empty() {
        return false;
    }
    if cert.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return false;
    }
    let l1: f64 = cert.weights.iter().sum();
    if l1 <= 0.0 {
        return false;
    }
    let max_norm = normals.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let (residual, gap) = residual_and_gap(&cert.weights, normals, offsets);
    residual <= cert_tol * l1 * max_norm && gap < -cert_tol
}

/// Solver state between add cycles.
///
/// `primal` is the projection of the anchor onto the polyhedron of the
/// `active` constraints, all of which are tight there, and `duals` holds their
/// (nonnegative) multipliers in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct GiState {
    primal: Vector,
    active: Vec<usize>,
    duals: Vec<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    skipped: Vec<usize>,
    steps: usize,
}

enum Cycle {
    Optimal,
    Added,
    Skipped,
    Infeasible(FarkasCertificate),
}

impl GiState {
    /// Unconstrained start: primal at the anchor, no active constraints.
    pub fn initial(problem: &QpProblem) -> Self {
        let n = problem.dim();
        GiState {
            primal: problem.anchor().clone(),
            active: Vec::new(),
            duals: Vec::new(),
            q: DMatrix::identity(n, n),
            r: DMatrix::zeros(n, n),
            skipped: Vec::new(),
            steps: 0,
        }
    }

    pub fn primal(&self) -> &Vector {
        &self.primal
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn duals(&self) -> &[f64] {
        &self.duals
    }

    /// Number of completed add cycles since the initial state.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Multipliers scattered to a length-`m` vector (zero for inactive).
    pub fn full_duals(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (&j, &u) in self.active.iter().zip(&self.duals) {
            out[j] = u;
        }
        out
    }

    /// Constraints set aside because they were violated by less than the
    /// certificate tolerance in a direction already blocked by the active set.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    /// True when no constraint is violated beyond `opts.feas_tol`.
    pub fn is_optimal(&self, problem: &QpProblem, opts: &QpOptions) -> bool {
        self.most_violated(problem, opts).is_none()
    }

    /// Checks the structural invariants: tight actives, nonnegative duals,
    /// stationarity against the anchor, and a well-conditioned factorization.
    pub fn satisfies_invariants(&self, problem: &QpProblem, tol: f64) -> bool {
        let b_inf = problem.offsets().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let tight = self
            .active
            .iter()
            .all(|&j| problem.violation(j, &self.primal).abs() <= tol * (1.0 + b_inf) * problem.normals()[j].norm().max(1.0));
        let duals_ok = self.duals.iter().all(|&u| u >= -1e-12);
        let mut stationarity = &self.primal - problem.anchor();
        for (&j, &u) in self.active.iter().zip(&self.duals) {
            stationarity.axpy(u, &problem.normals()[j], 1.0);
        }
        let kkt = stationarity.norm() <= tol * (1.0 + problem.anchor().norm());
        let k = self.active.len();
        let rank_ok = (0..k).all(|i| self.r[(i, i)].abs() > 0.0);
        tight && duals_ok && kkt && rank_ok
    }

    fn is_active(&self, j: usize) -> bool {
        self.active.contains(&j)
    }

    fn most_violated(&self, problem: &QpProblem, opts: &QpOptions) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..problem.len() {
            if self.is_active(j) || self.skipped.contains(&j) {
                continue;
            }
            let v = problem.scaled_violation(j, &self.primal);
            if v > opts.feas_tol && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Back substitution with the leading `k × k` block of `R`.
    fn solve_r(&self, rhs: &[f64]) -> Vec<f64> {
        let k = rhs.len();
        let mut out = rhs.to_vec();
        for i in (0..k).rev() {
            let s = out[i] - (i + 1..k).map(|j| self.r[(i, j)] * out[j]).sum::<f64>();
            out[i] = s / self.r[(i, i)];
        }
        out
    }

    /// Appends a column whose coordinates in the current `Q` basis are `d`.
    fn factor_add(&mut self, mut d: Vector) {
        let n = d.len();
        let k = self.active.len();
        for i in (k + 1..n).rev() {
            if d[i] == 0.0 {
                continue;
            }
            let h = d[i - 1].hypot(d[i]);
            let (c, s) = (d[i - 1] / h, d[i] / h);
            d[i - 1] = h;
            d[i] = 0.0;
            rotate_columns(&mut self.q, i - 1, i, c, s);
        }
        for i in 0..=k {
            self.r[(i, k)] = d[i];
        }
    }

    /// Removes active position `idx`, restoring the triangular form of `R`.
    fn factor_drop(&mut self, idx: usize) {
        let k = self.active.len();
        for col in idx..k - 1 {
            for row in 0..k {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.r.nrows() {
            self.r[(row, k - 1)] = 0.0;
        }
        for i in idx..k - 1 {
            let (a, b) = (self.r[(i, i)], self.r[(i + 1, i)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in i..k - 1 {
                let (ri, rj) = (self.r[(i, col)], self.r[(i + 1, col)]);
                self.r[(i, col)] = c * ri + s * rj;
                self.r[(i + 1, col)] = -s * ri + c * rj;
            }
            self.r[(i + 1, i)] = 0.0;
            rotate_columns(&mut self.q, i, i + 1, c, s);
        }
        self.active.remove(idx);
        self.duals.remove(idx);
    }

    /// One add cycle: pick the most violated constraint and take partial
    /// (drop) steps until it can be added with a full step.
    fn cycle(&mut self, problem: &QpProblem, opts: &QpOptions) -> Result<Cycle, QpError> {
        let Some(p) = self.most_violated(problem, opts) else {
            return Ok(Cycle::Optimal);
        };
        let n = problem.dim();
        let cp = &problem.normals()[p];
        let cp_norm = cp.norm();
        let mut up = 0.0;
        let mut drops = 0usize;
        loop {
            let k = self.active.len();
            let d: Vector = self.q.transpose() * cp;
            let tail = d.rows(k, n - k);
            let z_norm = tail.norm();
            let dependent = z_norm <= opts.rank_tol * cp_norm;
            let rdir = self.solve_r(&d.as_slice()[..k]);

            let r_max = rdir.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            let mut partial = f64::INFINITY;
            let mut drop_idx = None;
            for (idx, (&rj, &uj)) in rdir.iter().zip(&self.duals).enumerate() {
                if rj > opts.dual_tol * r_max.max(1.0) {
                    let t = uj.max(0.0) / rj;
                    if t < partial {
                        partial = t;
                        drop_idx = Some(idx);
                    }
                }
            }
            let violation = problem.violation(p, &self.primal);
            let full = if dependent { f64::INFINITY } else { violation.max(0.0) / (z_norm * z_norm) };

            if partial.is_infinite() && full.is_infinite() {
                let mut weights = vec![0.0; problem.len()];
                weights[p] = 1.0;
                for (&j, &rj) in self.active.iter().zip(&rdir) {
                    weights[j] = (-rj).max(0.0);
                }
                let cert = FarkasCertificate::from_weights(weights, problem.normals(), problem.offsets());
                if check_farkas(&cert, problem, opts.cert_tol) {
                    return Ok(Cycle::Infeasible(cert));
                }
                self.skipped.push(p);
                return Ok(Cycle::Skipped);
            }

            let t = partial.min(full);
            for (u, rj) in self.duals.iter_mut().zip(&rdir) {
                *u = (*u - t * rj).max(0.0);
            }
            up += t;
            if !dependent {
                let z = self.q.columns(k, n - k) * tail;
                self.primal.axpy(-t, &z, 1.0);
            }
            if full <= partial {
                self.factor_add(d);
                self.active.push(p);
                self.duals.push(up);
                self.steps += 1;
                return Ok(Cycle::Added);
            }
            let idx = drop_idx.expect("finite partial step has a blocking constraint");
            self.factor_drop(idx);
            drops += 1;
            if drops > n + problem.len() + 1 {
                return Err(QpError::DegenerateConstraintSet(format!(
                    "constraint {p} could not be added after {drops} drops"
                )));
            }
        }
    }
}

fn rotate_columns(q: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..q.nrows() {
        let (qa, qb) = (q[(row, a)], q[(row, b)]);
        q[(row, a)] = c * qa + s * qb;
        q[(row, b)] = -s * qa + c * qb;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GiOutcome {
    /// The state is optimal: its primal is the projection onto the polyhedron.
    Solved(GiState),
    Infeasible(FarkasCertificate),
    /// The step budget ran out; the state is a valid partial solve.
    BudgetExhausted(GiState),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Progressed(GiState),
    Optimal(GiState),
    Infeasible(FarkasCertificate),
}

fn cycle_cap(problem: &QpProblem) -> usize {
    100 * (problem.len() + problem.dim() + 1)
}

/// Solves the QP from the unconstrained start.
pub fn gi_solve(problem: &QpProblem, opts: &QpOptions) -> Result<GiOutcome, QpError> {
    gi_resume(GiState::initial(problem), problem, opts)
}

/// Continues solving from an existing state (warm start or partial solve).
/// The step budget counts add cycles taken in this call.
pub fn gi_resume(mut state: GiState, problem: &QpProblem, opts: &QpOptions) -> Result<GiOutcome, QpError> {
    if state.primal.len() != problem.dim() {
        return Err(QpError::DimensionMismatch { expected: problem.dim(), found: state.primal.len() });
    }
    let cap = cycle_cap(problem);
    let mut taken = 0usize;
    let mut cycles = 0usize;
    loop {
        if opts.step_budget.is_some_and(|b| taken >= b) {
            return Ok(if state.is_optimal(problem, opts) {
                GiOutcome::Solved(state)
            } else {
                GiOutcome::BudgetExhausted(state)
            });
        }
        match state.cycle(problem, opts)? {
            Cycle::Optimal => return Ok(GiOutcome::Solved(state)),
            Cycle::Infeasible(cert) => return Ok(GiOutcome::Infeasible(cert)),
            Cycle::Added => taken += 1,
            Cycle::Skipped => {}
        }
        cycles += 1;
        if cycles > cap {
            return Err(QpError::DegenerateConstraintSet(format!("no convergence after {cycles} cycles")));
        }
    }
}

/// Exactly one add cycle (including any drops it needs).
pub fn gi_step(mut state: GiState, problem: &QpProblem, opts: &QpOptions) -> Result<StepOutcome, QpError> {
    if state.primal.len() != problem.dim() {
        return Err(QpError::DimensionMismatch { expected: problem.dim(), found: state.primal.len() });
    }
    loop {
        match state.cycle(problem, opts)? {
            Cycle::Optimal => return Ok(StepOutcome::Optimal(state)),
            Cycle::Added => return Ok(StepOutcome::Progressed(state)),
            Cycle::Infeasible(cert) => return Ok(StepOutcome::Infeasible(cert)),
            Cycle::Skipped => {}
        }
    }
}

/// Appends constraints to `problem` and returns `state` ready to continue on
/// the extended problem. Active set, duals and factorization carry over; the
/// primal is unchanged and may violate the new constraints.
pub fn gi_warm_start(state: GiState, problem: &mut QpProblem, added: Vec<(Vector, f64)>) -> Result<GiState, QpError> {
    if state.primal.len() != problem.dim() {
        return Err(QpError::DimensionMismatch { expected: problem.dim(), found: state.primal.len() });
    }
    for (c, b) in added {
        problem.push(c, b)?;
    }
    Ok(state)
}
