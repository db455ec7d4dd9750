//! Convex feasibility by supporting halfspaces and quadratic programming.
//!
//! The crate solves three closely related problems over `R^n`:
//!
//! * set intersection: find a point in `K_1 ∩ … ∩ K_r` for projectable closed
//!   convex sets ([`solvers::solve_sip`]),
//! * convex inequalities: find `x` with `f(x) <= 0` for a convex `f` given by a
//!   value/subgradient oracle ([`solvers::solve_cip`]),
//! * best approximation: find the point of `K_1 ∩ … ∩ K_r` nearest to an anchor
//!   ([`solvers::solve_bap`]).
//!
//! Each round projects the current iterate onto the sets (or linearizes `f`),
//! keeps the resulting separating halfspaces in a [`halfspace::HalfspaceStore`],
//! and moves to the projection onto the polyhedron cut out by a working set of
//! them. The projections onto polyhedra are computed by the dual active-set
//! solver in [`qp`], whose intermediate iterates are already usable steps and
//! whose failure mode is a Farkas-type certificate of infeasibility.
//!
//! [`diagnostics`] classifies the observed convergence rate of a
//! [`solvers::SolveTrace`] and reports on divergent runs.

pub mod diagnostics;
pub mod functions;
pub mod geometry;
pub mod halfspace;
pub mod qp;
pub mod solvers;

pub use diagnostics::{
    angle_statistics, estimate_kappa, estimate_rates, estimate_rates_with, rates_from_errors, recession_report,
    recession_residuals, trace_angle_statistics, AngleStatistics, DiagnosticsError, KappaEstimate, RateClass,
    RateReport, RateThresholds, RecessionReport, RECESSION_PROBE,
};
pub use functions::{ConvexFunction, GluedExp, MaxAffine, NormMinusRadius, QuadraticMax, QuadraticMaxError, QuadraticPiece, TieBreak};
pub use geometry::{project, relax, subgradient_halfspace, supporting_halfspace, ConvexSet, GeometryError, ProjectionResult};
pub use halfspace::{
    aggregate, angle_between, HalfspaceError, HalfspaceStore, HalfspaceTag, Origin, TaggedHalfspace,
    WorkingSetPolicy,
};
pub use qp::{
    check_farkas, check_farkas_system, gi_resume, gi_solve, gi_step, gi_warm_start, FarkasCertificate, GiOutcome,
    GiState, QpError, QpOptions, QpProblem, StepOutcome,
};
pub use solvers::{
    solve_bap, solve_cip, solve_map, solve_sip, step_accept, AcceptOutcome, BapProblem, Certificate,
    CipProblem, OutcomeKind, SipProblem, SolveOutcome, SolveTrace, SolverConfig, SolverError,
    TraceRecord,
};

/// Dense point or direction in `R^n`.
pub type Vector = nalgebra::DVector<f64>;

/// Dense matrix, used for ellipsoid shapes and quadratic pieces.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Default membership tolerance: a point is in a set when its projection
/// distance is at most this.
pub const DEFAULT_TOL_FEAS: f64 = 1e-9;

pub(crate) fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}
