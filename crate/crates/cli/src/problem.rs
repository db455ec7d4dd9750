//! JSON problem files.
//!
//! ```json
//! {
//!   "kind": "sip",
//!   "dimension": 2,
//!   "sets": [{"type": "ball", "center": [0, 0], "radius": 1}],
//!   "start": [3, 0],
//!   "known_solution": [1, 0]
//! }
//! ```
//!
//! `bap` files give `anchor` instead of `start`; `cip` files give a
//! `function` object instead of `sets`.

use crate::CliError;
use cvxfeas::{
    BapProblem, CipProblem, ConvexFunction, ConvexSet, GeometryError, GluedExp, Matrix, MaxAffine, NormMinusRadius,
    QuadraticMax, QuadraticPiece, SipProblem, TieBreak, Vector,
};
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Sip,
    Cip,
    Bap,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    kind: ProblemKind,
    dimension: usize,
    sets: Option<Vec<RawSet>>,
    function: Option<RawFunction>,
    start: Option<Vec<f64>>,
    anchor: Option<Vec<f64>>,
    known_solution: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RawSet {
    Halfspace { normal: Vec<f64>, offset: f64 },
    Hyperplane { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Affine { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
    Ellipsoid { shape: Vec<Vec<f64>>, center: Vec<f64> },
    Polyhedron { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
    ExpRegion { side: Side },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Side {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawTie {
    #[default]
    Lowest,
    Highest,
}

impl From<RawTie> for TieBreak {
    fn from(t: RawTie) -> Self {
        match t {
            RawTie::Lowest => TieBreak::LowestIndex,
            RawTie::Highest => TieBreak::HighestIndex,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAffinePiece {
    normal: Vec<f64>,
    offset: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadraticPiece {
    hessian: Vec<Vec<f64>>,
    linear: Vec<f64>,
    constant: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum RawFunction {
    MaxAffine {
        pieces: Vec<RawAffinePiece>,
        #[serde(default)]
        tie: RawTie,
    },
    Zigzag,
    NormMinusRadius { center: Vec<f64>, radius: f64 },
    QuadraticMax {
        pieces: Vec<RawQuadraticPiece>,
        #[serde(default)]
        tie: RawTie,
    },
    GluedExp,
}

/// A validated problem.
#[derive(Clone)]
pub enum Problem {
    Sip(SipProblem),
    Cip(CipProblem),
    Bap(BapProblem),
}

#[derive(Clone)]
pub struct ProblemFile {
    pub dimension: usize,
    pub problem: Problem,
    pub known_solution: Option<Vector>,
}

impl ProblemFile {
    pub fn kind(&self) -> ProblemKind {
        match self.problem {
            Problem::Sip(_) => ProblemKind::Sip,
            Problem::Cip(_) => ProblemKind::Cip,
            Problem::Bap(_) => ProblemKind::Bap,
        }
    }

    pub fn sets(&self) -> Option<&[ConvexSet]> {
        match &self.problem {
            Problem::Sip(p) => Some(p.sets()),
            Problem::Bap(p) => Some(p.sets()),
            Problem::Cip(_) => None,
        }
    }

    /// Number of distance columns in a trace of this problem.
    pub fn distance_count(&self) -> usize {
        self.sets().map_or(1, <[ConvexSet]>::len)
    }
}

fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> CliError {
    CliError::Validation { field: field.into(), constraint: constraint.into() }
}

fn vector(field: &str, values: &[f64], n: usize) -> Result<Vector, CliError> {
    if values.len() != n {
        return Err(invalid(field, format!("expected {n} entries, found {}", values.len())));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("{field}[{k}]"), "must be finite"));
    }
    Ok(Vector::from_column_slice(values))
}

fn matrix(field: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix, CliError> {
    if rows.len() != n {
        return Err(invalid(field, format!("expected {n} rows, found {}", rows.len())));
    }
    let mut m = Matrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        m.set_row(i, &vector(&format!("{field}[{i}]"), row, n)?.transpose());
    }
    Ok(m)
}

fn rows(field: &str, normals: &[Vec<f64>], offsets: &[f64], n: usize) -> Result<Vec<(Vector, f64)>, CliError> {
    if normals.len() != offsets.len() {
        return Err(invalid(field, format!("{} normals but {} offsets", normals.len(), offsets.len())));
    }
    normals
        .iter()
        .zip(offsets)
        .enumerate()
        .map(|(k, (a, &b))| {
            if !b.is_finite() {
                return Err(invalid(format!("{field}.offsets[{k}]"), "must be finite"));
            }
            Ok((vector(&format!("{field}.normals[{k}]"), a, n)?, b))
        })
        .collect()
}

fn geometry(field: &str, e: GeometryError) -> CliError {
    invalid(field, e.to_string())
}

fn build_set(field: &str, raw: &RawSet, n: usize) -> Result<ConvexSet, CliError> {
    let set = match raw {
        RawSet::Halfspace { normal, offset } => {
            ConvexSet::halfspace(vector(&format!("{field}.normal"), normal, n)?, *offset)
        }
        RawSet::Hyperplane { normal, offset } => {
            ConvexSet::hyperplane(vector(&format!("{field}.normal"), normal, n)?, *offset)
        }
        RawSet::Ball { center, radius } => ConvexSet::ball(vector(&format!("{field}.center"), center, n)?, *radius),
        RawSet::Box { lo, hi } => {
            ConvexSet::boxed(vector(&format!("{field}.lo"), lo, n)?, vector(&format!("{field}.hi"), hi, n)?)
        }
        RawSet::Affine { normals, offsets } => ConvexSet::affine(rows(field, normals, offsets, n)?),
        RawSet::Ellipsoid { shape, center } => {
            let q = matrix(&format!("{field}.shape"), shape, n)?;
            let c = vector(&format!("{field}.center"), center, n)?;
            return ConvexSet::ellipsoid(q, c).map_err(|e| geometry(&format!("{field}.shape"), e));
        }
        RawSet::Polyhedron { normals, offsets } => ConvexSet::polyhedron(rows(field, normals, offsets, n)?),
        RawSet::ExpRegion { side } => {
            if n != 2 {
                return Err(invalid(field, "exp_region requires dimension 2"));
            }
            Ok(match side {
                Side::Above => ConvexSet::exp_above(),
                Side::Below => ConvexSet::exp_below(),
            })
        }
    };
    set.map_err(|e| geometry(field, e))
}

fn build_function(raw: &RawFunction, n: usize) -> Result<Arc<dyn ConvexFunction>, CliError> {
    let f: Arc<dyn ConvexFunction> = match raw {
        RawFunction::MaxAffine { pieces, tie } => {
            if pieces.is_empty() {
                return Err(invalid("function.pieces", "at least one piece"));
            }
            let pieces = pieces
                .iter()
                .enumerate()
                .map(|(k, p)| Ok((vector(&format!("function.pieces[{k}].normal"), &p.normal, n)?, p.offset)))
                .collect::<Result<Vec<_>, CliError>>()?;
            Arc::new(MaxAffine::new(pieces, (*tie).into()).ok_or_else(|| invalid("function.pieces", "finite"))?)
        }
        RawFunction::Zigzag => {
            if n != 2 {
                return Err(invalid("dimension", "zigzag requires dimension 2"));
            }
            Arc::new(MaxAffine::zigzag())
        }
        RawFunction::NormMinusRadius { center, radius } => {
            let c = vector("function.center", center, n)?;
            if !radius.is_finite() {
                return Err(invalid("function.radius", "must be finite"));
            }
            Arc::new(NormMinusRadius::new(c, *radius).ok_or_else(|| invalid("function", "finite parameters"))?)
        }
        RawFunction::QuadraticMax { pieces, tie } => {
            let pieces = pieces
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    Ok(QuadraticPiece {
                        hessian: matrix(&format!("function.pieces[{k}].hessian"), &p.hessian, n)?,
                        linear: vector(&format!("function.pieces[{k}].linear"), &p.linear, n)?,
                        constant: p.constant,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let q = QuadraticMax::new(pieces, (*tie).into())
                .map_err(|e| invalid("function.pieces", format!("{e:?}")))?;
            Arc::new(q)
        }
        RawFunction::GluedExp => {
            if n != 1 {
                return Err(invalid("dimension", "glued_exp requires dimension 1"));
            }
            Arc::new(GluedExp)
        }
    };
    Ok(f)
}

/// Parses and validates a problem from JSON text.
pub fn parse_problem_str(text: &str) -> Result<ProblemFile, CliError> {
    let raw: RawProblem = serde_json::from_str(text).map_err(|e| CliError::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let n = raw.dimension;
    if n == 0 {
        return Err(invalid("dimension", "must be positive"));
    }
    let point_field = if raw.kind == ProblemKind::Bap { "anchor" } else { "start" };
    let (point, other) = match raw.kind {
        ProblemKind::Bap => (raw.anchor, raw.start.map(|_| "start")),
        _ => (raw.start, raw.anchor.map(|_| "anchor")),
    };
    if let Some(f) = other {
        return Err(invalid(f, format!("not used by {:?} problems; give {point_field}", raw.kind)));
    }
    let point = vector(point_field, &point.ok_or_else(|| invalid(point_field, "required"))?, n)?;
    let known_solution = raw.known_solution.map(|s| vector("known_solution", &s, n)).transpose()?;

    let problem = match raw.kind {
        ProblemKind::Cip => {
            if raw.sets.is_some() {
                return Err(invalid("sets", "cip problems take a function"));
            }
            let f = build_function(raw.function.as_ref().ok_or_else(|| invalid("function", "required"))?, n)?;
            Problem::Cip(CipProblem::new(f, point).map_err(|e| invalid("function", e.to_string()))?)
        }
        kind => {
            if raw.function.is_some() {
                return Err(invalid("function", "sip and bap problems take sets"));
            }
            let raw_sets = raw.sets.ok_or_else(|| invalid("sets", "required"))?;
            if raw_sets.is_empty() {
                return Err(invalid("sets", "at least one set"));
            }
            let sets = raw_sets
                .iter()
                .enumerate()
                .map(|(k, s)| build_set(&format!("sets[{k}]"), s, n))
                .collect::<Result<Vec<_>, _>>()?;
            if kind == ProblemKind::Sip {
                Problem::Sip(SipProblem::new(sets, point).map_err(|e| invalid("sets", e.to_string()))?)
            } else {
                Problem::Bap(BapProblem::new(sets, point).map_err(|e| invalid("sets", e.to_string()))?)
            }
        }
    };
    Ok(ProblemFile { dimension: n, problem, known_solution })
}

pub fn parse_problem(path: &Path) -> Result<ProblemFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    parse_problem_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(text: &str) -> String {
        match parse_problem_str(text) {
            Err(CliError::Validation { field, .. }) => field,
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("accepted invalid file"),
        }
    }

    #[test]
    fn minimal_sip_loads() {
        let p = parse_problem_str(
            r#"{"kind":"sip","dimension":2,"sets":[{"type":"halfspace","normal":[1,0],"offset":1}],"start":[3,0]}"#,
        )
        .unwrap();
        assert_eq!(p.kind(), ProblemKind::Sip);
        assert_eq!(p.sets().unwrap().len(), 1);
    }

    #[test]
    fn indefinite_ellipsoid_is_rejected() {
        let text = r#"{"kind":"sip","dimension":2,
            "sets":[{"type":"ball","center":[0,0],"radius":1},
                    {"type":"ellipsoid","shape":[[1,0],[0,-1]],"center":[0,0]}],
            "start":[1,1]}"#;
        assert_eq!(field_of(text), "sets[1].shape");
    }

    #[test]
    fn zigzag_family_loads() {
        let p = parse_problem_str(r#"{"kind":"cip","dimension":2,"function":{"family":"zigzag"},"start":[1,1]}"#)
            .unwrap();
        let Problem::Cip(cip) = &p.problem else { panic!() };
        let (value, y) = cip.function().evaluate(&Vector::from_column_slice(&[1.0, 1.0]));
        assert_eq!(value, 1.0);
        assert_eq!(y, Vector::from_column_slice(&[2.0, -1.0]));
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        match parse_problem_str("{\"kind\": \"sip\",\n \"dimension\": }") {
            Err(CliError::Parse { location, .. }) => assert!(location.starts_with("line 2"), "{location}"),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn dimension_mismatches_name_the_field() {
        let text = r#"{"kind":"sip","dimension":2,"sets":[{"type":"ball","center":[0,0,0],"radius":1}],"start":[1,1]}"#;
        assert_eq!(field_of(text), "sets[0].center");
        let text = r#"{"kind":"bap","dimension":2,"sets":[{"type":"ball","center":[0,0],"radius":1}],"start":[1,1]}"#;
        assert_eq!(field_of(text), "start");
        let text = r#"{"kind":"sip","dimension":1,"sets":[{"type":"box","lo":[1],"hi":[0]}],"start":[1]}"#;
        assert_eq!(field_of(text), "sets[0]");
    }

    #[test]
    fn every_set_type_parses() {
        let text = r#"{"kind":"bap","dimension":2,"sets":[
            {"type":"halfspace","normal":[1,0],"offset":1},
            {"type":"hyperplane","normal":[0,1],"offset":0},
            {"type":"ball","center":[0,0],"radius":2},
            {"type":"box","lo":[-1,-1],"hi":[1,1]},
            {"type":"affine","normals":[[1,1]],"offsets":[0]},
            {"type":"ellipsoid","shape":[[2,0],[0,1]],"center":[0,0]},
            {"type":"polyhedron","normals":[[1,0],[0,1]],"offsets":[1,1]},
            {"type":"exp_region","side":"below"}],
            "anchor":[3,3],"known_solution":[0,0]}"#;
        let p = parse_problem_str(text).unwrap();
        assert_eq!(p.distance_count(), 8);
        assert!(p.known_solution.is_some());
    }
}
