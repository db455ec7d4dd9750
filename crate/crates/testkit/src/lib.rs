//! Reference oracles and random problem corpora used by the test suites.
//!
//! Nothing here calls into the solvers under test; the oracles work directly
//! on `nalgebra` matrices.

use cvxfeas::{
    functions::ConvexFunction, ConvexSet, MaxAffine, Matrix, NormMinusRadius, TieBreak, Vector,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(rng: &mut impl Rng, n: usize) -> Vector {
    // Box-Muller; keeps the dependency list to `rand`.
    Vector::from_fn(n, |_, _| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

pub fn unit_vector(rng: &mut impl Rng, n: usize) -> Vector {
    loop {
        let g = gaussian_vector(rng, n);
        let norm = g.norm();
        if norm > 1e-3 {
            return g / norm;
        }
    }
}

/// Uniform point of the ball `B(center, radius)`.
pub fn point_in_ball(rng: &mut impl Rng, center: &Vector, radius: f64) -> Vector {
    let n = center.len();
    let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
    center + unit_vector(rng, n) * r
}

/// Projection of `anchor` onto `{x : C x <= b}` by enumerating every
/// linearly independent candidate active set, or `None` when no candidate is
/// feasible (the polyhedron is empty).
///
/// The projection is the nearest feasible point among the projections onto
/// the affine hulls of all independent subsets, because the optimum is the
/// projection onto the hull of its own active constraints.
pub fn enumerate_projection(anchor: &Vector, normals: &[Vector], offsets: &[f64], tol: f64) -> Option<Vector> {
    let m = normals.len();
    let n = anchor.len();
    let scale = 1.0 + anchor.amax() + offsets.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let feasible = |x: &Vector| (0..m).all(|j| normals[j].dot(x) - offsets[j] <= tol * scale * normals[j].norm());
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1u32 << m) {
        let subset: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        if subset.len() > n {
            continue;
        }
        let x = if subset.is_empty() {
            anchor.clone()
        } else {
            let c = DMatrix::from_fn(subset.len(), n, |i, k| normals[subset[i]][k]);
            let gram = &c * c.transpose();
            let svd = gram.clone().svd(false, false);
            let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
            if smin <= 1e-12 * smax {
                continue;
            }
            let rhs = Vector::from_fn(subset.len(), |i, _| normals[subset[i]].dot(anchor) - offsets[subset[i]]);
            let Some(lambda) = gram.lu().solve(&rhs) else { continue };
            anchor - c.transpose() * lambda
        };
        if feasible(&x) {
            let d = (&x - anchor).norm();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Lawson–Hanson nonnegative least squares: `min |A u - b|` over `u >= 0`,
/// where the columns of `A` are `columns`. Returns `(u, residual norm)`.
pub fn nnls(columns: &[Vector], b: &Vector) -> (Vec<f64>, f64) {
    let m = columns.len();
    if m == 0 {
        return (Vec::new(), b.norm());
    }
    let a = Matrix::from_columns(columns);
    let tol = 1e-13 * (1.0 + a.amax()) * (1.0 + b.amax());
    let mut u = Vector::zeros(m);
    let mut passive = vec![false; m];
    let restricted_solve = |passive: &[bool]| -> Vector {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let sub = Matrix::from_columns(&idx.iter().map(|&j| columns[j].clone()).collect::<Vec<_>>());
        let sol = sub.svd(true, true).solve(b, 1e-14).expect("svd solve");
        let mut full = Vector::zeros(m);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };
    for _ in 0..(3 * m + 10) {
        let w = a.transpose() * (b - &a * &u);
        let candidate = (0..m).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let s = restricted_solve(&passive);
            if (0..m).filter(|&k| passive[k]).all(|k| s[k] > 0.0) {
                u = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for k in 0..m {
                if passive[k] && s[k] <= 0.0 {
                    alpha = alpha.min(u[k] / (u[k] - s[k]));
                }
            }
            u += (&s - &u) * alpha;
            for k in 0..m {
                if passive[k] && u[k] <= 1e-15 {
                    passive[k] = false;
                    u[k] = 0.0;
                }
            }
        }
    }
    let residual = (&a * &u - b).norm();
    (u.iter().copied().collect(), residual)
}

/// Projection onto `{z : (z - c)' Q (z - c) <= 1}` by bisection on the
/// multiplier, solving `(I + mu Q) w = x - c` directly for each trial.
pub fn ellipsoid_projection_bisection(shape: &Matrix, center: &Vector, x: &Vector) -> Vector {
    let w = x - center;
    if w.dot(&(shape * &w)) <= 1.0 {
        return x.clone();
    }
    let n = w.len();
    let solve = |mu: f64| -> Vector {
        let m = Matrix::identity(n, n) + shape * mu;
        m.lu().solve(&w).expect("I + mu Q is nonsingular")
    };
    let level = |mu: f64| {
        let z = solve(mu);
        z.dot(&(shape * &z)) - 1.0
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while level(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if level(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    center + solve(0.5 * (lo + hi))
}

/// Random least-distance QP data.
#[derive(Debug, Clone)]
pub struct RandomQp {
    pub anchor: Vector,
    pub normals: Vec<Vector>,
    pub offsets: Vec<f64>,
    /// Points known to satisfy every constraint (empty for infeasible draws).
    pub feasible_points: Vec<Vector>,
}

/// Draws a QP with `n` variables and `m` constraints. Feasible draws contain
/// a ball around a random center; infeasible draws add a constraint pair that
/// contradicts along a random direction.
pub fn random_qp(rng: &mut impl Rng, n: usize, m: usize, feasible: bool, samples: usize) -> RandomQp {
    let center = gaussian_vector(rng, n);
    let radius = rng.gen_range(0.05..0.5);
    let mut normals = Vec::with_capacity(m);
    let mut offsets = Vec::with_capacity(m);
    let count = if feasible { m } else { m.saturating_sub(2) };
    for _ in 0..count {
        let a = gaussian_vector(rng, n) * rng.gen_range(0.5..2.0);
        let slack = rng.gen_range(0.0..1.0);
        offsets.push(a.dot(&center) + a.norm() * (radius + slack));
        normals.push(a);
    }
    if !feasible {
        let d = unit_vector(rng, n);
        let gap = rng.gen_range(0.1..1.0);
        let t = d.dot(&center);
        normals.push(d.clone());
        offsets.push(t - gap);
        normals.push(-d * rng.gen_range(0.5..2.0));
        let last = normals.len() - 1;
        // d' x <= t - gap together with d' x >= t.
        offsets.push(-t * normals[last].norm());
        let k = rng.gen_range(0..normals.len());
        normals.swap(k, last);
        offsets.swap(k, last);
    }
    let anchor = &center + gaussian_vector(rng, n) * rng.gen_range(0.5..4.0);
    let feasible_points = if feasible { (0..samples).map(|_| point_in_ball(rng, &center, radius)).collect() } else { Vec::new() };
    RandomQp { anchor, normals, offsets, feasible_points }
}

/// A set-intersection instance whose sets all contain `B(center, radius)`.
#[derive(Debug, Clone)]
pub struct FeasibleInstance {
    pub sets: Vec<ConvexSet>,
    pub start: Vector,
    pub center: Vector,
    pub radius: f64,
}

impl FeasibleInstance {
    pub fn sample_feasible(&self, rng: &mut impl Rng, count: usize) -> Vec<Vector> {
        (0..count).map(|_| point_in_ball(rng, &self.center, self.radius)).collect()
    }
}

fn random_set_containing(rng: &mut impl Rng, center: &Vector, radius: f64) -> ConvexSet {
    let n = center.len();
    match rng.gen_range(0..4) {
        0 => {
            let a = gaussian_vector(rng, n);
            let b = a.dot(center) + a.norm() * (radius + rng.gen_range(0.0..0.5));
            ConvexSet::halfspace(a, b).expect("nonzero normal")
        }
        1 => {
            let big = radius + rng.gen_range(0.5..2.0);
            let shift = unit_vector(rng, n) * (big - radius) * rng.gen_range(0.3..1.0);
            ConvexSet::ball(center + shift, big).expect("positive radius")
        }
        2 => {
            let lo = Vector::from_fn(n, |i, _| center[i] - radius - rng.gen_range(0.0..1.0));
            let hi = Vector::from_fn(n, |i, _| center[i] + radius + rng.gen_range(0.0..1.0));
            ConvexSet::boxed(lo, hi).expect("ordered bounds")
        }
        _ => {
            // Q = V diag(l) V' with semi-axes 1/sqrt(l); the ball fits when
            // sqrt(l_max) (|c - center| + radius) <= 1.
            let v = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let axes = Vector::from_fn(n, |_, _| radius * rng.gen_range(1.5..4.0));
            let l = axes.map(|s| 1.0 / (s * s));
            let shape = &v * Matrix::from_diagonal(&l) * v.transpose();
            let shape = (&shape + shape.transpose()) * 0.5;
            let room = axes.min() - radius;
            let c = center + unit_vector(rng, n) * room * rng.gen_range(0.0..0.9);
            ConvexSet::ellipsoid(shape, c).expect("positive definite")
        }
    }
}

/// Random feasible set-intersection instances in dimension 2..=4 with 2..=4
/// sets.
pub fn feasible_corpus(seed: u64, count: usize) -> Vec<FeasibleInstance> {
    let mut rng = rng(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(2..=4);
            let r = rng.gen_range(2..=4);
            let center = gaussian_vector(&mut rng, n);
            let radius = rng.gen_range(0.05..0.3);
            let sets = (0..r).map(|_| random_set_containing(&mut rng, &center, radius)).collect();
            let start = &center + unit_vector(&mut rng, n) * rng.gen_range(2.0..8.0);
            FeasibleInstance { sets, start, center, radius }
        })
        .collect()
}

/// A convex inequality whose zero sublevel set contains `B(center, radius)`.
#[derive(Clone)]
pub struct FeasibleInequality {
    pub f: Arc<dyn ConvexFunction>,
    pub start: Vector,
    pub center: Vector,
    pub radius: f64,
}

impl FeasibleInequality {
    pub fn sample_feasible(&self, rng: &mut impl Rng, count: usize) -> Vec<Vector> {
        (0..count).map(|_| point_in_ball(rng, &self.center, self.radius)).collect()
    }
}

pub fn feasible_inequalities(seed: u64, count: usize) -> Vec<FeasibleInequality> {
    let mut rng = rng(seed);
    (0..count)
        .map(|k| {
            let n = rng.gen_range(2..=4);
            let center = gaussian_vector(&mut rng, n);
            let radius = rng.gen_range(0.05..0.3);
            let f: Arc<dyn ConvexFunction> = if k % 3 == 2 {
                let big = radius + rng.gen_range(0.2..1.0);
                let shift = unit_vector(&mut rng, n) * (big - radius) * 0.5;
                Arc::new(NormMinusRadius::new(&center + shift, big).expect("finite"))
            } else {
                let pieces = (0..rng.gen_range(2..=6))
                    .map(|_| {
                        let a = gaussian_vector(&mut rng, n);
                        let b = -a.dot(&center) - a.norm() * (radius + rng.gen_range(0.0..0.5));
                        (a, b)
                    })
                    .collect();
                Arc::new(MaxAffine::new(pieces, TieBreak::LowestIndex).expect("valid pieces"))
            };
            let start = &center + unit_vector(&mut rng, n) * rng.gen_range(2.0..8.0);
            FeasibleInequality { f, start, center, radius }
        })
        .collect()
}
