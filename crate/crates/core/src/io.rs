//! CSV formats.
//!
//! Value fields use the columns `branch, xi, x0, value`, one row per node;
//! interface values are written as `branch = 0, xi = 0`. Floats carry 17
//! significant digits so that a write/read cycle is exact.
//!
//! Trajectories use `t, branch, xi, x0, event`, where `event` is empty,
//! `entry:<i>` on the sample that leaves the interface into `P_i`, or
//! `exit:<i>` on the sample that lands on the interface from `P_i`; a sample
//! carrying both is flagged `exit:<i>;entry:<j>`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::solver::{GridSpec, SolverError, ValueField};
use crate::trajectory::Trajectory;

pub const FIELD_HEADER: [&str; 4] = ["branch", "xi", "x0", "value"];
pub const TRAJECTORY_HEADER: [&str; 5] = ["t", "branch", "xi", "x0", "event"];

/// Relative tolerance, in units of `h`, for matching coordinates to nodes.
const NODE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: u64, msg: String },
    #[error("missing {0} node values")]
    Missing(usize),
    #[error(transparent)]
    Shape(#[from] SolverError),
}

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_field_csv<W: Write>(out: W, grid: &GridSpec, field: &ValueField) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIELD_HEADER)?;
    let zero = fmt_f64(0.0);
    for (j, u) in field.gamma().iter().enumerate() {
        w.write_record(["0", zero.as_str(), &fmt_f64(grid.x0_at(j)), &fmt_f64(*u)])?;
    }
    for b in 1..=field.n_branches() {
        let label = b.to_string();
        for k in 0..field.n_xi() {
            let xi = fmt_f64(grid.xi_at(k));
            for j in 0..field.n_x0() {
                w.write_record([
                    label.as_str(),
                    xi.as_str(),
                    &fmt_f64(grid.x0_at(j)),
                    &fmt_f64(field.node(b, k, j)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn node_index(coord: f64, origin: f64, h: f64, n: usize) -> Option<usize> {
    let s = (coord - origin) / h;
    let k = s.round();
    ((s - k).abs() <= NODE_TOL * s.abs().max(1.0) && k >= 0.0 && k < n as f64).then_some(k as usize)
}

/// Reads a field written by [`write_field_csv`] for a problem with
/// `n_branches` half-planes on `grid`. Every node must appear exactly once.
pub fn read_field_csv<R: Read>(input: R, grid: &GridSpec, n_branches: usize) -> Result<ValueField, IoError> {
    grid.validate()?;
    let (n_xi, n_x0) = (grid.n_xi(), grid.n_x0());
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    if r.headers()?.iter().ne(FIELD_HEADER) {
        return Err(IoError::Format {
            line: 1,
            msg: format!("expected header {}", FIELD_HEADER.join(",")),
        });
    }
    let mut planes: Vec<Vec<Option<f64>>> = vec![vec![None; n_xi * n_x0]; n_branches];
    let mut gamma: Vec<Option<f64>> = vec![None; n_x0];
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| IoError::Format { line, msg };
        if record.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", record.len())));
        }
        let branch: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad branch {:?}", &record[0])))?;
        let num = |i: usize| -> Result<f64, IoError> {
            let v: f64 = record[i]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad number {:?}", &record[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("non-finite {}", FIELD_HEADER[i])))
            }
        };
        let (xi, x0, value) = (num(1)?, num(2)?, num(3)?);
        let j = node_index(x0, grid.x0_min, grid.h, n_x0).ok_or_else(|| err(format!("x0 = {x0} is not a node")))?;
        let slot = if branch == 0 {
            if xi != 0.0 {
                return Err(err("interface rows need xi = 0".into()));
            }
            &mut gamma[j]
        } else if branch <= n_branches {
            let k = node_index(xi, 0.0, grid.h, n_xi).ok_or_else(|| err(format!("xi = {xi} is not a node")))?;
            &mut planes[branch - 1][k * n_x0 + j]
        } else {
            return Err(err(format!("branch {branch} out of range")));
        };
        if slot.replace(value).is_some() {
            return Err(err("duplicate node".into()));
        }
    }
    let missing = planes.iter().flatten().chain(&gamma).filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(IoError::Missing(missing));
    }
    let unwrap = |v: Vec<Option<f64>>| v.into_iter().map(|x| x.unwrap_or_default()).collect::<Vec<_>>();
    Ok(ValueField::from_parts(
        grid,
        planes.into_iter().map(unwrap).collect(),
        unwrap(gamma),
    )?)
}

pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> Result<(), IoError> {
    let mut events: Vec<Vec<String>> = vec![Vec::new(); traj.samples().len()];
    for e in traj.exit_events() {
        events[e.sample].push(format!("exit:{}", e.branch));
    }
    for e in traj.entry_events() {
        events[e.sample].push(format!("entry:{}", e.branch));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for ((t, p), event) in traj.samples().iter().zip(&events) {
        w.write_record([
            fmt_f64(*t),
            p.branch().label().to_string(),
            fmt_f64(p.xi()),
            fmt_f64(p.x0()),
            event.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of floats under `header`.
pub fn write_table_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}
