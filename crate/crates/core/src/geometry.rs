//! Projection oracles for closed convex sets and the halfspaces they induce.

use crate::functions::ConvexFunction;
use crate::halfspace::{HalfspaceTag, TaggedHalfspace};
use crate::qp::{gi_solve, GiOutcome, QpError, QpOptions, QpProblem};
use crate::{all_finite, Matrix, Vector};
use nalgebra::linalg::SymmetricEigen;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid set: {0}")]
    InvalidSet(String),
    #[error("point has non-finite entries")]
    NonFinitePoint,
    #[error("ellipsoid multiplier could not be bracketed (ill-conditioned shape matrix)")]
    EllipsoidRootFindFailure,
    #[error("projection failed: {0}")]
    ProjectionFailure(String),
    #[error("point is inside the set (distance {distance:e}); no separating halfspace")]
    PointInsideSet { distance: f64 },
    #[error("function value {value:e} is not positive; no cut is needed")]
    FunctionNotPositive { value: f64 },
    #[error("zero subgradient at positive value {value:e}: the inequality has no solution")]
    ZeroSubgradientAtPositiveValue { value: f64 },
    #[error("relaxation parameter {0} outside [0, 2]")]
    LambdaOutOfRange(f64),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// `{x : (x - center)' shape (x - center) <= 1}` with `shape` symmetric
/// positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: Matrix,
    center: Vector,
    eigenvalues: Vector,
    eigenvectors: Matrix,
}

impl Ellipsoid {
    pub fn shape(&self) -> &Matrix {
        &self.shape
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    fn project(&self, x: &Vector) -> Result<Vector, GeometryError> {
        let w = x - &self.center;
        if w.dot(&(&self.shape * &w)) <= 1.0 {
            return Ok(x.clone());
        }
        let wt = self.eigenvectors.transpose() * &w;
        let terms: Vec<(f64, f64)> = self.eigenvalues.iter().zip(wt.iter()).map(|(&l, &c)| (l, c * c)).collect();
        // Boundary residual phi(mu) = sum l c^2 / (1 + mu l)^2 - 1 is decreasing in mu.
        let phi = |mu: f64| terms.iter().map(|&(l, c2)| l * c2 / ((1.0 + mu * l) * (1.0 + mu * l))).sum::<f64>() - 1.0;
        let dphi = |mu: f64| -2.0 * terms.iter().map(|&(l, c2)| l * l * c2 / (1.0 + mu * l).powi(3)).sum::<f64>();

        let lmax = self.eigenvalues.max();
        let mut lo = 0.0;
        let mut hi = 1.0 / lmax;
        let mut grown = 0;
        while phi(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            grown += 1;
            if grown > 200 || !hi.is_finite() {
                return Err(GeometryError::EllipsoidRootFindFailure);
            }
        }
        let mut mu = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = phi(mu);
            if f.abs() <= 1e-12 {
                break;
            }
            if f > 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let newton = mu - f / dphi(mu);
            mu = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 1e-17 * hi.max(1e-300) {
                break;
            }
        }
        let zt = Vector::from_iterator(wt.len(), wt.iter().zip(self.eigenvalues.iter()).map(|(&c, &l)| c / (1.0 + mu * l)));
        Ok(&self.center + &self.eigenvectors * zt)
    }
}

/// `{x : a_k' x = b_k}` for linearly independent rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    rows: Vec<(Vector, f64)>,
    // Thin QR of the transposed row matrix: A' = Q R.
    q: Matrix,
    r: Matrix,
}

impl AffineSubspace {
    pub fn rows(&self) -> &[(Vector, f64)] {
        &self.rows
    }

    fn project(&self, x: &Vector) -> Vector {
        let residual = Vector::from_iterator(self.rows.len(), self.rows.iter().map(|(a, b)| a.dot(x) - b));
        // Solve R' s = residual, then x - Q s.
        let s = self
            .r
            .transpose()
            .solve_lower_triangular(&residual)
            .expect("rank checked at construction");
        x - &self.q * s
    }
}

/// Intersection of finitely many halfspaces, assumed nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    normals: Vec<Vector>,
    offsets: Vec<f64>,
}

impl Polyhedron {
    pub fn halfspaces(&self) -> impl Iterator<Item = (&Vector, f64)> {
        self.normals.iter().zip(self.offsets.iter().copied())
    }

    fn project(&self, x: &Vector) -> Result<Vector, GeometryError> {
        let problem = QpProblem::new(x.clone(), self.normals.clone(), self.offsets.clone())?;
        match gi_solve(&problem, &QpOptions::default())? {
            GiOutcome::Solved(state) => Ok(state.primal().clone()),
            GiOutcome::Infeasible(_) => Err(GeometryError::ProjectionFailure("polyhedron is empty".into())),
            GiOutcome::BudgetExhausted(_) => unreachable!("no step budget"),
        }
    }
}

/// Epigraph `{(u, v) : v >= exp(-u)}` or its mirror image
/// `{(u, v) : v <= -exp(-u)}` in `R^2`. The two are disjoint, yet share the
/// recession direction `(1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpRegion {
    pub upper: bool,
}

impl ExpRegion {
    /// Returns `(point, offset)` with `offset = x - point` built from the
    /// curve normal so that it stays accurate when the point is far out on the
    /// flat tail.
    fn project(&self, x: &Vector) -> Result<(Vector, Vector), GeometryError> {
        let (a, b) = if self.upper { (x[0], x[1]) } else { (x[0], -x[1]) };
        let ea = (-a).exp();
        if !ea.is_finite() {
            return Err(GeometryError::ProjectionFailure("exponential overflow".into()));
        }
        if b >= ea {
            return Ok((x.clone(), Vector::zeros(2)));
        }
        // Stationarity of (s - a)^2 + (e^{-s} - b)^2; the root is unique for
        // points outside the set and lies in [a, a + (e^{-a} - b)].
        let g = |s: f64| {
            let e = (-s).exp();
            (s - a) - e * (e - b)
        };
        let dg = |s: f64| {
            let e = (-s).exp();
            1.0 + 2.0 * e * e - b * e
        };
        let mut lo = a;
        let mut hi = a + (ea - b);
        let mut expand = 0;
        while g(hi) < 0.0 {
            hi += hi - lo;
            expand += 1;
            if expand > 60 {
                return Err(GeometryError::ProjectionFailure("exponential root not bracketed".into()));
            }
        }
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = g(s);
            if f == 0.0 {
                break;
            }
            if f < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = s - f / dg(s);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - s).abs() <= 1e-16 * (1.0 + s.abs()) || hi - lo <= 1e-16 * (1.0 + s.abs()) {
                s = next;
                break;
            }
            s = next;
        }
        let e = (-s).exp();
        let scale = b - e;
        let (point, offset) = if self.upper {
            (Vector::from_column_slice(&[s, e]), Vector::from_column_slice(&[scale * e, scale]))
        } else {
            (Vector::from_column_slice(&[s, -e]), Vector::from_column_slice(&[scale * e, -scale]))
        };
        Ok((point, offset))
    }
}

/// A nonempty closed convex set with an exact projection.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Halfspace { normal: Vector, offset: f64 },
    Hyperplane { normal: Vector, offset: f64 },
    Ball { center: Vector, radius: f64 },
    Box { lo: Vector, hi: Vector },
    Affine(AffineSubspace),
    Ellipsoid(Ellipsoid),
    Polyhedron(Polyhedron),
    Exp(ExpRegion),
}

fn invalid(msg: impl Into<String>) -> GeometryError {
    GeometryError::InvalidSet(msg.into())
}

fn check_vector(v: &Vector, what: &str) -> Result<(), GeometryError> {
    if v.is_empty() || !all_finite(v) {
        return Err(invalid(format!("{what} must be a nonempty vector of finite entries")));
    }
    Ok(())
}

impl ConvexSet {
    pub fn halfspace(normal: Vector, offset: f64) -> Result<Self, GeometryError> {
        check_vector(&normal, "normal")?;
        if normal.norm() == 0.0 || !offset.is_finite() {
            return Err(invalid("halfspace normal must be nonzero and offset finite"));
        }
        Ok(ConvexSet::Halfspace { normal, offset })
    }

    pub fn hyperplane(normal: Vector, offset: f64) -> Result<Self, GeometryError> {
        check_vector(&normal, "normal")?;
        if normal.norm() == 0.0 || !offset.is_finite() {
            return Err(invalid("hyperplane normal must be nonzero and offset finite"));
        }
        Ok(ConvexSet::Hyperplane { normal, offset })
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self, GeometryError> {
        check_vector(&center, "center")?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("ball radius must be positive"));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self, GeometryError> {
        check_vector(&lo, "lo")?;
        check_vector(&hi, "hi")?;
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(invalid("box requires lo <= hi componentwise"));
        }
        Ok(ConvexSet::Box { lo, hi })
    }

    pub fn affine(rows: Vec<(Vector, f64)>) -> Result<Self, GeometryError> {
        let n = rows.first().ok_or_else(|| invalid("affine subspace needs at least one row"))?.0.len();
        for (a, b) in &rows {
            check_vector(a, "row")?;
            if a.len() != n {
                return Err(GeometryError::DimensionMismatch { expected: n, found: a.len() });
            }
            if !b.is_finite() {
                return Err(invalid("row offset must be finite"));
            }
        }
        if rows.len() > n {
            return Err(invalid("more rows than the dimension; rows must be independent"));
        }
        let at = Matrix::from_columns(&rows.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>());
        let qr = at.qr();
        let (q, r) = (qr.q(), qr.r());
        let scale = r.diagonal().amax();
        if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
            return Err(invalid("affine rows are linearly dependent"));
        }
        Ok(ConvexSet::Affine(AffineSubspace { rows, q, r }))
    }

    pub fn ellipsoid(shape: Matrix, center: Vector) -> Result<Self, GeometryError> {
        check_vector(&center, "center")?;
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(GeometryError::DimensionMismatch { expected: n, found: shape.nrows() });
        }
        if shape.iter().any(|v| !v.is_finite()) {
            return Err(invalid("shape matrix must be finite"));
        }
        let scale = shape.amax().max(f64::MIN_POSITIVE);
        if (&shape - shape.transpose()).amax() > 1e-12 * scale {
            return Err(invalid("ellipsoid shape matrix must be symmetric"));
        }
        if shape.clone().cholesky().is_none() {
            return Err(invalid("ellipsoid shape matrix must be positive definite"));
        }
        let eig = SymmetricEigen::new(shape.clone());
        if eig.eigenvalues.min() <= 0.0 {
            return Err(invalid("ellipsoid shape matrix must be positive definite"));
        }
        Ok(ConvexSet::Ellipsoid(Ellipsoid { shape, center, eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors }))
    }

    /// Intersection of `a' x <= b`; rejected when empty.
    pub fn polyhedron(halfspaces: Vec<(Vector, f64)>) -> Result<Self, GeometryError> {
        let n = halfspaces.first().ok_or_else(|| invalid("polyhedron needs at least one halfspace"))?.0.len();
        let (normals, offsets): (Vec<Vector>, Vec<f64>) = halfspaces.into_iter().unzip();
        for a in &normals {
            check_vector(a, "normal")?;
        }
        let problem = QpProblem::new(Vector::zeros(n), normals.clone(), offsets.clone())
            .map_err(|e| invalid(format!("polyhedron: {e}")))?;
        match gi_solve(&problem, &QpOptions::default())? {
            GiOutcome::Solved(_) => Ok(ConvexSet::Polyhedron(Polyhedron { normals, offsets })),
            _ => Err(invalid("polyhedron is empty")),
        }
    }

    /// `{(u, v) : v >= exp(-u)}`.
    pub fn exp_above() -> Self {
        ConvexSet::Exp(ExpRegion { upper: true })
    }

    /// `{(u, v) : v <= -exp(-u)}`.
    pub fn exp_below() -> Self {
        ConvexSet::Exp(ExpRegion { upper: false })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Halfspace { normal, .. } | ConvexSet::Hyperplane { normal, .. } => normal.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Affine(a) => a.rows[0].0.len(),
            ConvexSet::Ellipsoid(e) => e.center.len(),
            ConvexSet::Polyhedron(p) => p.normals[0].len(),
            ConvexSet::Exp(_) => 2,
        }
    }

    /// Short family name, as used in problem files.
    pub fn kind(&self) -> &'static str {
        match self {
            ConvexSet::Halfspace { .. } => "halfspace",
            ConvexSet::Hyperplane { .. } => "hyperplane",
            ConvexSet::Ball { .. } => "ball",
            ConvexSet::Box { .. } => "box",
            ConvexSet::Affine(_) => "affine",
            ConvexSet::Ellipsoid(_) => "ellipsoid",
            ConvexSet::Polyhedron(_) => "polyhedron",
            ConvexSet::Exp(_) => "exp_region",
        }
    }

    pub fn project(&self, x: &Vector) -> Result<ProjectionResult, GeometryError> {
        project(self, x)
    }

    pub fn distance(&self, x: &Vector) -> Result<f64, GeometryError> {
        Ok(project(self, x)?.distance)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool, GeometryError> {
        Ok(self.distance(x)? <= tol)
    }
}

/// Nearest point of a set together with the displacement to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Vector,
    /// `|x - point|`.
    pub distance: f64,
    /// `x - point`, an outward normal of the set at `point`.
    pub offset: Vector,
}

impl ProjectionResult {
    fn from_point(x: &Vector, point: Vector) -> Self {
        let offset = x - &point;
        ProjectionResult { distance: offset.norm(), point, offset }
    }
}

pub fn project(set: &ConvexSet, x: &Vector) -> Result<ProjectionResult, GeometryError> {
    if x.len() != set.dim() {
        return Err(GeometryError::DimensionMismatch { expected: set.dim(), found: x.len() });
    }
    if !all_finite(x) {
        return Err(GeometryError::NonFinitePoint);
    }
    let point = match set {
        ConvexSet::Halfspace { normal, offset } => {
            let excess = normal.dot(x) - offset;
            if excess <= 0.0 {
                x.clone()
            } else {
                x - normal * (excess / normal.norm_squared())
            }
        }
        ConvexSet::Hyperplane { normal, offset } => x - normal * ((normal.dot(x) - offset) / normal.norm_squared()),
        ConvexSet::Ball { center, radius } => {
            let d = x - center;
            let norm = d.norm();
            if norm <= *radius {
                x.clone()
            } else {
                center + d * (radius / norm)
            }
        }
        ConvexSet::Box { lo, hi } => Vector::from_iterator(
            x.len(),
            x.iter().zip(lo.iter().zip(hi.iter())).map(|(v, (l, h))| v.clamp(*l, *h)),
        ),
        ConvexSet::Affine(a) => a.project(x),
        ConvexSet::Ellipsoid(e) => e.project(x)?,
        ConvexSet::Polyhedron(p) => p.project(x)?,
        ConvexSet::Exp(region) => {
            let (point, offset) = region.project(x)?;
            return Ok(ProjectionResult { distance: offset.norm(), point, offset });
        }
    };
    Ok(ProjectionResult::from_point(x, point))
}

/// The halfspace `{z : a' z <= a' P(x)}` with `a = x - P(x)`; it contains the
/// set and has `x` on its outside at depth `|a|^2`.
pub fn supporting_halfspace(
    set: &ConvexSet,
    x: &Vector,
    tag: HalfspaceTag,
    tol_feas: f64,
) -> Result<TaggedHalfspace, GeometryError> {
    let proj = project(set, x)?;
    halfspace_from_projection(&proj, tag, tol_feas)
}

pub(crate) fn halfspace_from_projection(
    proj: &ProjectionResult,
    tag: HalfspaceTag,
    tol_feas: f64,
) -> Result<TaggedHalfspace, GeometryError> {
    if proj.distance <= tol_feas {
        return Err(GeometryError::PointInsideSet { distance: proj.distance });
    }
    let offset = proj.offset.dot(&proj.point);
    TaggedHalfspace::new(proj.offset.clone(), offset, tag).map_err(|e| GeometryError::ProjectionFailure(e.to_string()))
}

/// The linearization cut `{z : f(x) + y'(z - x) <= 0}` with `y ∈ ∂f(x)`.
pub fn subgradient_halfspace(
    f: &dyn ConvexFunction,
    x: &Vector,
    round: usize,
) -> Result<TaggedHalfspace, GeometryError> {
    if x.len() != f.dim() {
        return Err(GeometryError::DimensionMismatch { expected: f.dim(), found: x.len() });
    }
    let (value, y) = f.evaluate(x);
    cut_from_evaluation(x, value, &y, round)
}

pub(crate) fn cut_from_evaluation(x: &Vector, value: f64, y: &Vector, round: usize) -> Result<TaggedHalfspace, GeometryError> {
    if value.is_nan() || value <= 0.0 {
        return Err(GeometryError::FunctionNotPositive { value });
    }
    if y.norm() == 0.0 {
        return Err(GeometryError::ZeroSubgradientAtPositiveValue { value });
    }
    TaggedHalfspace::new(y.clone(), y.dot(x) - value, HalfspaceTag::new(round, 0))
        .map_err(|e| GeometryError::ProjectionFailure(e.to_string()))
}

/// `x + lambda (P(x) - x)`.
pub fn relax(set: &ConvexSet, x: &Vector, lambda: f64) -> Result<Vector, GeometryError> {
    if !(0.0..=2.0).contains(&lambda) {
        return Err(GeometryError::LambdaOutOfRange(lambda));
    }
    let proj = project(set, x)?;
    Ok(x - proj.offset * lambda)
}
