//! Tagged halfspaces, the store that accumulates them across rounds, and the
//! working-set policies that decide which of them enter each projection.

use crate::qp::FarkasCertificate;
use crate::{all_finite, Vector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HalfspaceError {
    #[error("halfspace normal must be nonzero and finite")]
    ZeroNormal,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate tag {0:?}")]
    DuplicateTag(HalfspaceTag),
    #[error("tag round {found} precedes the latest stored round {latest}")]
    RoundOutOfOrder { latest: usize, found: usize },
    #[error("no halfspace generated in round {0}")]
    EmptySelection(usize),
    #[error("round {round} has no halfspace from set {set}")]
    MissingBestHalfspace { round: usize, set: usize },
    #[error("aggregated normal vanishes")]
    ZeroAggregateNormal { certificate: Option<FarkasCertificate> },
    #[error("invalid aggregation weights")]
    InvalidWeights,
}

/// Which object produced a halfspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    /// Projection onto set `l` (or, for inequality problems, the single
    /// function, which is always `Set(0)`).
    Set(usize),
    /// Dual-weighted combination of older halfspaces.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfspaceTag {
    pub round: usize,
    pub origin: Origin,
}

impl HalfspaceTag {
    pub fn new(round: usize, set: usize) -> Self {
        HalfspaceTag { round, origin: Origin::Set(set) }
    }
}

/// `{x : normal' x <= offset}` with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedHalfspace {
    normal: Vector,
    offset: f64,
    tag: HalfspaceTag,
    unit_normal: Vector,
}

impl TaggedHalfspace {
    pub fn new(normal: Vector, offset: f64, tag: HalfspaceTag) -> Result<Self, HalfspaceError> {
        let norm = normal.norm();
        if !all_finite(&normal) || !offset.is_finite() || norm == 0.0 || !norm.is_finite() {
            return Err(HalfspaceError::ZeroNormal);
        }
        let unit_normal = &normal / norm;
        Ok(TaggedHalfspace { normal, offset, tag, unit_normal })
    }

    pub fn normal(&self) -> &Vector {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn tag(&self) -> HalfspaceTag {
        self.tag
    }

    pub fn unit_normal(&self) -> &Vector {
        &self.unit_normal
    }

    /// Offset of the same halfspace written with the unit normal.
    pub fn unit_offset(&self) -> f64 {
        self.offset / self.normal.norm()
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Signed distance from `x` to the boundary, positive outside.
    pub fn signed_distance(&self, x: &Vector) -> f64 {
        self.unit_normal.dot(x) - self.unit_offset()
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.signed_distance(x) <= tol
    }
}

/// How the working set `S_i` is chosen from the accumulated halfspaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkingSetPolicy {
    /// Halfspaces from rounds `max(i - window, 0) ..= i`.
    LastRounds { window: usize },
    /// Only the halfspaces generated in round `i`.
    CurrentRoundOnly,
    /// Everything ever generated; nested across rounds.
    AllAccumulating,
    /// `LastRounds` minus older halfspaces nearly parallel to a newer one.
    AnglePruned { max_angle: f64, window: usize },
}

impl WorkingSetPolicy {
    pub const DEFAULT_WINDOW: usize = 10;
    pub const DEFAULT_MAX_ANGLE: f64 = 0.05;

    /// The oldest round still admissible at round `i`.
    fn first_round(&self, i: usize) -> usize {
        match *self {
            WorkingSetPolicy::LastRounds { window } | WorkingSetPolicy::AnglePruned { window, .. } => {
                i.saturating_sub(window)
            }
            WorkingSetPolicy::CurrentRoundOnly => i,
            WorkingSetPolicy::AllAccumulating => 0,
        }
    }
}

impl Default for WorkingSetPolicy {
    fn default() -> Self {
        WorkingSetPolicy::LastRounds { window: Self::DEFAULT_WINDOW }
    }
}

/// Angle in `[0, π]` between two nonzero vectors.
pub fn angle_between(u: &Vector, v: &Vector) -> Result<f64, HalfspaceError> {
    if u.len() != v.len() {
        return Err(HalfspaceError::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(HalfspaceError::ZeroVector);
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos())
}

/// Combines `Σ w_j a_j' x <= Σ w_j b_j`. Every point satisfying all inputs
/// satisfies the result.
///
/// When the combined normal vanishes the weights are either useless (gap
/// `>= 0`) or a Farkas certificate for the inputs (gap `< 0`), which is
/// attached to the error.
pub fn aggregate(
    halfspaces: &[TaggedHalfspace],
    weights: &[f64],
    tag: HalfspaceTag,
) -> Result<TaggedHalfspace, HalfspaceError> {
    if halfspaces.is_empty() || halfspaces.len() != weights.len() {
        return Err(HalfspaceError::InvalidWeights);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(HalfspaceError::InvalidWeights);
    }
    let n = halfspaces[0].dim();
    let mut normal = Vector::zeros(n);
    let mut offset = 0.0;
    let mut scale = 0.0;
    for (h, &w) in halfspaces.iter().zip(weights) {
        if h.dim() != n {
            return Err(HalfspaceError::DimensionMismatch { expected: n, found: h.dim() });
        }
        normal.axpy(w, h.normal(), 1.0);
        offset += w * h.offset();
        scale += w * h.normal().norm();
    }
    if normal.norm() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        let certificate = if offset < 0.0 {
            let normals: Vec<Vector> = halfspaces.iter().map(|h| h.normal().clone()).collect();
            let offsets: Vec<f64> = halfspaces.iter().map(|h| h.offset()).collect();
            Some(FarkasCertificate::from_weights(weights.to_vec(), &normals, &offsets))
        } else {
            None
        };
        return Err(HalfspaceError::ZeroAggregateNormal { certificate });
    }
    TaggedHalfspace::new(normal, offset, tag)
}

/// Accumulated halfspaces in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceStore {
    items: Vec<TaggedHalfspace>,
    policy: WorkingSetPolicy,
}

impl HalfspaceStore {
    pub fn new(policy: WorkingSetPolicy) -> Self {
        HalfspaceStore { items: Vec::new(), policy }
    }

    pub fn policy(&self) -> WorkingSetPolicy {
        self.policy
    }

    pub fn items(&self) -> &[TaggedHalfspace] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn latest_round(&self) -> Option<usize> {
        self.items.iter().map(|h| h.tag().round).max()
    }

    pub fn push(&mut self, h: TaggedHalfspace) -> Result<(), HalfspaceError> {
        if let Some(first) = self.items.first() {
            if first.dim() != h.dim() {
                return Err(HalfspaceError::DimensionMismatch { expected: first.dim(), found: h.dim() });
            }
        }
        if let Some(latest) = self.items.last().map(|l| l.tag().round) {
            if h.tag().round < latest {
                return Err(HalfspaceError::RoundOutOfOrder { latest, found: h.tag().round });
            }
        }
        if self.items.iter().any(|o| o.tag() == h.tag()) {
            return Err(HalfspaceError::DuplicateTag(h.tag()));
        }
        self.items.push(h);
        Ok(())
    }

    /// Indices (into [`items`](Self::items)) of the working set at round `i`.
    pub fn working_indices(&self, i: usize, l_star: usize) -> Result<Vec<usize>, HalfspaceError> {
        if !self.items.iter().any(|h| h.tag().round == i && matches!(h.tag().origin, Origin::Set(_))) {
            return Err(HalfspaceError::EmptySelection(i));
        }
        if self.policy == WorkingSetPolicy::AllAccumulating
            && !self.items.iter().any(|h| h.tag() == HalfspaceTag::new(i, l_star))
        {
            return Err(HalfspaceError::MissingBestHalfspace { round: i, set: l_star });
        }
        let first = self.policy.first_round(i);
        let window: Vec<usize> = (0..self.items.len())
            .filter(|&k| {
                let round = self.items[k].tag().round;
                round >= first && round <= i
            })
            .collect();
        Ok(match self.policy {
            WorkingSetPolicy::AnglePruned { max_angle, .. } => {
                let removed = self.dominated(&window, max_angle);
                window.into_iter().zip(removed).filter(|(_, r)| !r).map(|(k, _)| k).collect()
            }
            _ => window,
        })
    }

    /// The working set `S_i` at round `i`; `l_star` is the set farthest from
    /// the current iterate.
    pub fn select_working_set(&self, i: usize, l_star: usize) -> Result<Vec<TaggedHalfspace>, HalfspaceError> {
        Ok(self.working_indices(i, l_star)?.into_iter().map(|k| self.items[k].clone()).collect())
    }

    /// For each member of `subset`, whether some strictly newer member of
    /// `subset` has a normal within `max_angle` of it.
    fn dominated(&self, subset: &[usize], max_angle: f64) -> Vec<bool> {
        let cos_max = max_angle.cos();
        let mut removed = vec![false; subset.len()];
        // Walk from newest to oldest; `newer` holds the normals of strictly newer rounds.
        let mut newer: Vec<&Vector> = Vec::new();
        let mut pos = subset.len();
        while pos > 0 {
            let round = self.items[subset[pos - 1]].tag().round;
            let mut start = pos;
            while start > 0 && self.items[subset[start - 1]].tag().round == round {
                start -= 1;
            }
            for q in start..pos {
                let u = self.items[subset[q]].unit_normal();
                removed[q] = newer.iter().any(|w| u.dot(w) >= cos_max);
            }
            newer.extend((start..pos).map(|q| self.items[subset[q]].unit_normal()));
            pos = start;
        }
        removed
    }

    /// Removes every halfspace that has a strictly newer one within
    /// `max_angle`, returning how many were removed.
    pub fn prune_by_angle(&mut self, max_angle: f64) -> usize {
        let all: Vec<usize> = (0..self.items.len()).collect();
        let removed = self.dominated(&all, max_angle);
        let count = removed.iter().filter(|r| **r).count();
        let mut flags = removed.into_iter();
        self.items.retain(|_| !flags.next().unwrap_or(false));
        count
    }

    /// Keeps only the halfspaces for which `keep` returns true.
    pub fn retain(&mut self, keep: impl FnMut(&TaggedHalfspace) -> bool) {
        self.items.retain(keep);
    }

    /// Inserts `h` before all other items. Used for aggregates, whose round is
    /// older than everything that remains.
    pub fn push_front(&mut self, h: TaggedHalfspace) -> Result<(), HalfspaceError> {
        if let Some(first) = self.items.first() {
            if h.tag().round > first.tag().round {
                return Err(HalfspaceError::RoundOutOfOrder { latest: first.tag().round, found: h.tag().round });
            }
        }
        if self.items.iter().any(|o| o.tag() == h.tag()) {
            return Err(HalfspaceError::DuplicateTag(h.tag()));
        }
        self.items.insert(0, h);
        Ok(())
    }
}
