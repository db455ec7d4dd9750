//! Convex function oracles returning a value and one subgradient.

use crate::{all_finite, Matrix, Vector};

/// A convex `f : R^n -> R` evaluated together with an element of `∂f(x)`.
pub trait ConvexFunction: Send + Sync {
    fn dim(&self) -> usize;

    /// `(f(x), y)` with `y ∈ ∂f(x)`.
    fn evaluate(&self, x: &Vector) -> (f64, Vector);
}

/// Which active piece supplies the subgradient of a max-type function when
/// several attain the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

fn argmax(values: impl Iterator<Item = f64>, tie: TieBreak) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        let better = match tie {
            TieBreak::LowestIndex => v > best.1,
            TieBreak::HighestIndex => v >= best.1,
        };
        if better {
            best = (k, v);
        }
    }
    best
}

/// `f(x) = max_k (a_k' x + b_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxAffine {
    pieces: Vec<(Vector, f64)>,
    tie: TieBreak,
}

impl MaxAffine {
    /// `None` when there are no pieces, dimensions disagree or data is not finite.
    pub fn new(pieces: Vec<(Vector, f64)>, tie: TieBreak) -> Option<Self> {
        let n = pieces.first()?.0.len();
        let ok = n > 0 && pieces.iter().all(|(a, b)| a.len() == n && all_finite(a) && b.is_finite());
        ok.then_some(MaxAffine { pieces, tie })
    }

    /// `max(2 x1 - x2, 2 x2 - x1)`, whose zero sublevel set is a pointed cone
    /// on which cyclic projections zigzag.
    pub fn zigzag() -> Self {
        MaxAffine {
            pieces: vec![
                (Vector::from_column_slice(&[2.0, -1.0]), 0.0),
                (Vector::from_column_slice(&[-1.0, 2.0]), 0.0),
            ],
            tie: TieBreak::LowestIndex,
        }
    }

    pub fn pieces(&self) -> &[(Vector, f64)] {
        &self.pieces
    }
}

impl ConvexFunction for MaxAffine {
    fn dim(&self) -> usize {
        self.pieces[0].0.len()
    }

    fn evaluate(&self, x: &Vector) -> (f64, Vector) {
        let (k, value) = argmax(self.pieces.iter().map(|(a, b)| a.dot(x) + b), self.tie);
        (value, self.pieces[k].0.clone())
    }
}

/// `f(x) = |x - center| - radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMinusRadius {
    center: Vector,
    radius: f64,
}

impl NormMinusRadius {
    pub fn new(center: Vector, radius: f64) -> Option<Self> {
        (!center.is_empty() && all_finite(&center) && radius.is_finite()).then_some(NormMinusRadius { center, radius })
    }
}

impl ConvexFunction for NormMinusRadius {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn evaluate(&self, x: &Vector) -> (f64, Vector) {
        let d = x - &self.center;
        let norm = d.norm();
        let grad = if norm > 0.0 { d / norm } else { Vector::zeros(x.len()) };
        (norm - self.radius, grad)
    }
}

/// One piece `1/2 x' H x + g' x + c` of a [`QuadraticMax`]; `H` is symmetric
/// positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPiece {
    pub hessian: Matrix,
    pub linear: Vector,
    pub constant: f64,
}

impl QuadraticPiece {
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    fn gradient(&self, x: &Vector) -> Vector {
        &self.hessian * x + &self.linear
    }
}

/// Pointwise maximum of convex quadratics (affine pieces have `H = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMax {
    pieces: Vec<QuadraticPiece>,
    tie: TieBreak,
}

/// Why a [`QuadraticMax`] could not be built.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticMaxError {
    NoPieces,
    Dimension { piece: usize },
    NotSymmetric { piece: usize },
    NotPositiveSemidefinite { piece: usize },
}

impl QuadraticMax {
    pub fn new(pieces: Vec<QuadraticPiece>, tie: TieBreak) -> Result<Self, QuadraticMaxError> {
        let n = pieces.first().ok_or(QuadraticMaxError::NoPieces)?.linear.len();
        for (k, p) in pieces.iter().enumerate() {
            if n == 0 || p.linear.len() != n || p.hessian.nrows() != n || p.hessian.ncols() != n {
                return Err(QuadraticMaxError::Dimension { piece: k });
            }
            if p.hessian.iter().any(|v| !v.is_finite()) || !all_finite(&p.linear) || !p.constant.is_finite() {
                return Err(QuadraticMaxError::Dimension { piece: k });
            }
            let scale = p.hessian.amax().max(1.0);
            if (&p.hessian - p.hessian.transpose()).amax() > 1e-12 * scale {
                return Err(QuadraticMaxError::NotSymmetric { piece: k });
            }
            let min_eig = p.hessian.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-12 * scale {
                return Err(QuadraticMaxError::NotPositiveSemidefinite { piece: k });
            }
        }
        Ok(QuadraticMax { pieces, tie })
    }
}

impl ConvexFunction for QuadraticMax {
    fn dim(&self) -> usize {
        self.pieces[0].linear.len()
    }

    fn evaluate(&self, x: &Vector) -> (f64, Vector) {
        let (k, value) = argmax(self.pieces.iter().map(|p| p.value(x)), self.tie);
        (value, self.pieces[k].gradient(x))
    }
}

/// The one-dimensional `f(x) = exp(-1/|x|)` on `0 < |x| <= 1/2`, `f(0) = 0`,
/// continued by its tangent lines for `|x| > 1/2` so that it is convex on all
/// of `R`. Its zero set is `{0}` and `0 ∈ ∂f(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GluedExp;

impl GluedExp {
    const KNOT: f64 = 0.5;

    fn on_positive(t: f64) -> (f64, f64) {
        if t == 0.0 {
            (0.0, 0.0)
        } else if t <= Self::KNOT {
            let e = (-1.0 / t).exp();
            (e, e / (t * t))
        } else {
            let (v, d) = Self::on_positive(Self::KNOT);
            (v + d * (t - Self::KNOT), d)
        }
    }
}

impl ConvexFunction for GluedExp {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &Vector) -> (f64, Vector) {
        let t = x[0];
        let (value, slope) = Self::on_positive(t.abs());
        (value, Vector::from_element(1, slope.copysign(t)))
    }
}
