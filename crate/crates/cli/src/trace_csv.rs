//! Trace CSV: `iteration, step_norm, max_set_distance, d_1..d_r,
//! working_set_size, qp_steps_used, l_star, x_1..x_n`, one row per record.
//! Floats use 17 significant digits so that reading a file back gives the
//! same bits.

use crate::CliError;
use cvxfeas::{TraceRecord, Vector};
use std::io::{Read, Write};

pub fn header(r: usize, n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "step_norm", "max_set_distance"].map(String::from).to_vec();
    h.extend((1..=r).map(|l| format!("d_{l}")));
    h.extend(["working_set_size", "qp_steps_used", "l_star"].map(String::from));
    h.extend((1..=n).map(|k| format!("x_{k}")));
    h
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace(out: impl Write, records: &[TraceRecord]) -> Result<(), CliError> {
    let (r, n) = records.first().map_or((0, 0), |rec| (rec.per_set_distances.len(), rec.iterate.len()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(r, n))?;
    for rec in records {
        let mut row = vec![rec.iteration.to_string(), float(rec.step_norm), float(rec.max_set_distance())];
        row.extend(rec.per_set_distances.iter().map(|&d| float(d)));
        row.extend([rec.working_set_size, rec.qp_steps_used, rec.l_star].map(|k| k.to_string()));
        row.extend(rec.iterate.iter().map(|&x| float(x)));
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::Io { path: "trace".into(), source: e })?;
    Ok(())
}

pub fn trace_to_string(records: &[TraceRecord]) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write_trace(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("csv output is ASCII"))
}

fn bad(line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse { location: format!("trace line {line}"), message: message.into() }
}

/// Reads records back. Working sets, multipliers and new normals are not
/// stored and come back empty.
pub fn read_trace(input: impl Read) -> Result<Vec<TraceRecord>, CliError> {
    let mut rd = csv::Reader::from_reader(input);
    let names: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let r = names.iter().filter(|h| h.starts_with("d_")).count();
    let n = names.iter().filter(|h| h.starts_with("x_")).count();
    if names != header(r, n) {
        return Err(bad(1, format!("unexpected header {names:?}")));
    }
    let mut records = Vec::new();
    for (k, row) in rd.records().enumerate() {
        let row = row?;
        let line = k as u64 + 2;
        let f = |i: usize| -> Result<f64, CliError> {
            row[i].parse::<f64>().map_err(|_| bad(line, format!("column {} is not a number", names[i])))
        };
        let u = |i: usize| -> Result<usize, CliError> {
            row[i].parse::<usize>().map_err(|_| bad(line, format!("column {} is not an integer", names[i])))
        };
        let per_set_distances = (0..r).map(|l| f(3 + l)).collect::<Result<Vec<_>, _>>()?;
        let iterate = (0..n).map(|j| f(6 + r + j)).collect::<Result<Vec<_>, _>>()?;
        records.push(TraceRecord {
            iteration: u(0)?,
            iterate: Vector::from_vec(iterate),
            per_set_distances,
            l_star: u(5 + r)?,
            working_set_size: u(3 + r)?,
            qp_steps_used: u(4 + r)?,
            halfspaces_added: 0,
            step_norm: f(1)?,
            new_normals: Vec::new(),
            working_set: Vec::new(),
            duals: Vec::new(),
        });
    }
    Ok(records)
}
