//! Post-hoc analysis of solver traces: observed convergence rates, the
//! ratio of error to set distance, normal-angle statistics and recession
//! directions of divergent runs.

use crate::geometry::{ConvexSet, GeometryError};
use crate::solvers::{OutcomeKind, SolveTrace};
use crate::Vector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("only {usable} usable iterations, need at least {required}")]
    TooFewIterations { usable: usize, required: usize },
    #[error("trace did not end in divergence")]
    NotDiverging,
    #[error("reference point has dimension {found}, trace has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pragmatic cut-offs for rate classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateThresholds {
    /// Errors at or below `noise_factor * eps * (1 + |x̄|)` are not used.
    pub noise_factor: f64,
    pub min_usable: usize,
    /// Quadratic ratios count as bounded when their max is at most this
    /// multiple of their median.
    pub bounded_factor: f64,
    /// Superlinear ratios must end below this.
    pub superlinear_cutoff: f64,
    /// Linear factors must be below this.
    pub linear_ceiling: f64,
    /// Spread of the tail step ratios allowed for a linear rate, relative to
    /// `1 - factor`.
    pub linear_spread: f64,
}

impl Default for RateThresholds {
    fn default() -> Self {
        RateThresholds {
            noise_factor: 100.0,
            min_usable: 4,
            bounded_factor: 10.0,
            superlinear_cutoff: 0.1,
            linear_ceiling: 0.999,
            linear_spread: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateClass {
    Linear { factor: f64 },
    Superlinear { p: usize },
    Quadratic { p: usize },
    Inconclusive,
}

impl std::fmt::Display for RateClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateClass::Linear { factor } => write!(f, "Linear{{factor={factor:.6}}}"),
            RateClass::Superlinear { p } => write!(f, "Superlinear{{p={p}}}"),
            RateClass::Quadratic { p } => write!(f, "Quadratic{{p={p}}}"),
            RateClass::Inconclusive => write!(f, "Inconclusive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub reference_point: Vector,
    /// `|x_i - x̄|` for every record.
    pub errors: Vec<f64>,
    /// Length of the leading run of errors above the noise floor.
    pub usable: usize,
    /// `e_{i+1} / e_i` over the usable window.
    pub q_ratios: Vec<f64>,
    /// `(p, e_{i+p} / e_i)` per requested `p`.
    pub superlinear_ratios: Vec<(usize, Vec<f64>)>,
    /// `(p, e_{i+p} / e_i^2)` per requested `p`.
    pub quadratic_ratios: Vec<(usize, Vec<f64>)>,
    pub classification: RateClass,
}

pub fn estimate_rates(trace: &SolveTrace, reference: &Vector, p_values: &[usize]) -> Result<RateReport, DiagnosticsError> {
    estimate_rates_with(trace, reference, p_values, &RateThresholds::default())
}

pub fn estimate_rates_with(
    trace: &SolveTrace,
    reference: &Vector,
    p_values: &[usize],
    thresholds: &RateThresholds,
) -> Result<RateReport, DiagnosticsError> {
    let mut errors = Vec::with_capacity(trace.len());
    for x in trace.iterates() {
        if x.len() != reference.len() {
            return Err(DiagnosticsError::DimensionMismatch { expected: x.len(), found: reference.len() });
        }
        errors.push((x - reference).norm());
    }
    rates_from_errors(errors, reference, p_values, thresholds)
}

/// Rate analysis of an explicit error sequence.
pub fn rates_from_errors(
    errors: Vec<f64>,
    reference: &Vector,
    p_values: &[usize],
    t: &RateThresholds,
) -> Result<RateReport, DiagnosticsError> {
    let floor = t.noise_factor * f64::EPSILON * (1.0 + reference.norm());
    let usable = errors.iter().take_while(|e| **e > floor).count();
    if usable < t.min_usable {
        return Err(DiagnosticsError::TooFewIterations { usable, required: t.min_usable });
    }
    let e = &errors[..usable];
    let q_ratios: Vec<f64> = e.windows(2).map(|w| w[1] / w[0]).collect();
    let mut ps: Vec<usize> = p_values.iter().copied().filter(|p| *p >= 1).collect();
    ps.sort_unstable();
    ps.dedup();
    let superlinear_ratios: Vec<(usize, Vec<f64>)> =
        ps.iter().map(|&p| (p, (0..usable.saturating_sub(p)).map(|i| e[i + p] / e[i]).collect())).collect();
    let quadratic_ratios: Vec<(usize, Vec<f64>)> =
        ps.iter().map(|&p| (p, (0..usable.saturating_sub(p)).map(|i| e[i + p] / (e[i] * e[i])).collect())).collect();

    let classification = classify(&q_ratios, &superlinear_ratios, &quadratic_ratios, t);
    Ok(RateReport {
        reference_point: reference.clone(),
        errors,
        usable,
        q_ratios,
        superlinear_ratios,
        quadratic_ratios,
        classification,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Ratios shrink over their second half and end well below where they began.
fn decaying(ratios: &[f64]) -> bool {
    if ratios.len() < 2 {
        return false;
    }
    let tail = &ratios[(ratios.len() - 1) / 2..];
    let last = ratios[ratios.len() - 1];
    tail.windows(2).all(|w| w[1] < w[0]) && last <= 0.5 * ratios[0]
}

fn classify(
    q: &[f64],
    superlinear: &[(usize, Vec<f64>)],
    quadratic: &[(usize, Vec<f64>)],
    t: &RateThresholds,
) -> RateClass {
    for ((p, quad), (_, sup)) in quadratic.iter().zip(superlinear) {
        if quad.len() >= 2 && decaying(sup) {
            let max = quad.iter().copied().fold(0.0, f64::max);
            if max <= t.bounded_factor * median(quad) {
                return RateClass::Quadratic { p: *p };
            }
        }
    }
    for (p, sup) in superlinear {
        if decaying(sup) && sup[sup.len() - 1] < t.superlinear_cutoff {
            return RateClass::Superlinear { p: *p };
        }
    }
    if q.len() >= 2 {
        let tail = &q[q.len() / 2..];
        let factor = (tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp();
        let spread = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max) - tail.iter().copied().fold(f64::INFINITY, f64::min);
        if factor > 0.0 && factor < t.linear_ceiling && spread <= t.linear_spread * (1.0 - factor) {
            return RateClass::Linear { factor };
        }
    }
    RateClass::Inconclusive
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    /// `(iteration, |x_i - x̄| / max_l d(x_i, K_l))` where the distance is
    /// above the noise floor.
    pub ratios: Vec<(usize, f64)>,
    pub running_max: Vec<f64>,
    /// Maximum over the last half of `ratios`.
    pub tail_max: f64,
}

pub fn estimate_kappa(trace: &SolveTrace, reference: &Vector) -> Result<KappaEstimate, DiagnosticsError> {
    let floor = RateThresholds::default().noise_factor * f64::EPSILON * (1.0 + reference.norm());
    let mut ratios = Vec::new();
    for r in &trace.records {
        if r.iterate.len() != reference.len() {
            return Err(DiagnosticsError::DimensionMismatch { expected: r.iterate.len(), found: reference.len() });
        }
        let d = r.max_set_distance();
        if d > floor {
            ratios.push((r.iteration, (&r.iterate - reference).norm() / d));
        }
    }
    if ratios.len() < 2 {
        return Err(DiagnosticsError::TooFewIterations { usable: ratios.len(), required: 2 });
    }
    let mut running_max = Vec::with_capacity(ratios.len());
    let mut best = f64::NEG_INFINITY;
    for (_, k) in &ratios {
        best = best.max(*k);
        running_max.push(best);
    }
    let tail_max = ratios[ratios.len() / 2..].iter().map(|(_, k)| *k).fold(f64::NEG_INFINITY, f64::max);
    Ok(KappaEstimate { ratios, running_max, tail_max })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecessionReport {
    pub direction: Vector,
    pub per_set_recession_residuals: Vec<f64>,
}

/// Default probe multiple for recession residuals.
pub const RECESSION_PROBE: f64 = 1e6;

/// Direction of the last iterate and, per set, how far the ray from the
/// projection of that iterate along the direction leaves the set.
pub fn recession_report(trace: &SolveTrace, sets: &[ConvexSet]) -> Result<RecessionReport, DiagnosticsError> {
    if trace.outcome != OutcomeKind::Diverging {
        return Err(DiagnosticsError::NotDiverging);
    }
    let last = &trace.last().ok_or(DiagnosticsError::NotDiverging)?.iterate;
    let direction = last.normalize();
    let per_set_recession_residuals = recession_residuals(&direction, last, sets, RECESSION_PROBE)?;
    Ok(RecessionReport { direction, per_set_recession_residuals })
}

/// `d(P_l(base) + T d, K_l) / T` for each set.
pub fn recession_residuals(
    direction: &Vector,
    base: &Vector,
    sets: &[ConvexSet],
    probe: f64,
) -> Result<Vec<f64>, DiagnosticsError> {
    sets.iter()
        .map(|s| {
            let start = s.project(base)?.point;
            Ok(s.distance(&(start + direction * probe))? / probe)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleStatistics {
    /// Smallest pairwise angle among the normals of rounds
    /// `i + 1 - window ..= i`, or `None` with fewer than two normals.
    pub per_window_min: Vec<Option<f64>>,
    /// First round whose window holds a pair within `max_angle`.
    pub first_round_within: Option<usize>,
}

/// Pairwise normal angles over a sliding window of `window` rounds.
pub fn angle_statistics(normals_per_round: &[Vec<Vector>], window: usize, max_angle: f64) -> AngleStatistics {
    let window = window.max(1);
    let mut per_window_min = Vec::with_capacity(normals_per_round.len());
    let mut first_round_within = None;
    for i in 0..normals_per_round.len() {
        let start = (i + 1).saturating_sub(window);
        let pool: Vec<Vector> = normals_per_round[start..=i]
            .iter()
            .flatten()
            .filter(|n| n.norm() > 0.0)
            .map(|n| n.normalize())
            .collect();
        let mut min: Option<f64> = None;
        for a in 0..pool.len() {
            for b in a + 1..pool.len() {
                // Accurate near 0 and pi, unlike acos of the inner product.
                let angle = 2.0 * (&pool[a] - &pool[b]).norm().atan2((&pool[a] + &pool[b]).norm());
                min = Some(min.map_or(angle, |m| m.min(angle)));
            }
        }
        if first_round_within.is_none() && min.is_some_and(|m| m <= max_angle) {
            first_round_within = Some(i);
        }
        per_window_min.push(min);
    }
    AngleStatistics { per_window_min, first_round_within }
}

/// [`angle_statistics`] over the normals stored in a trace.
pub fn trace_angle_statistics(trace: &SolveTrace, window: usize, max_angle: f64) -> AngleStatistics {
    let normals: Vec<Vec<Vector>> = trace.records.iter().map(|r| r.new_normals.clone()).collect();
    angle_statistics(&normals, window, max_angle)
}
