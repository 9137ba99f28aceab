//! CSV traces.
//!
//! One row per (step, correct server). Floats are written with 17 significant
//! digits, so parsing a file back yields the exact values that were written.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::PhaseTag;
use crate::simnet::{MetricsTrace, ServerMetrics, StepMetrics};

pub const CSV_HEADER: [&str; 9] = [
    "step",
    "phase",
    "server_id",
    "loss",
    "grad_norm",
    "delta",
    "max_pairwise",
    "filter_rejects",
    "pulls",
];

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub step: u64,
    pub phase: String,
    pub server_id: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub delta: f64,
    pub max_pairwise: f64,
    pub filter_rejects: u64,
    pub pulls: u64,
}

fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Writes `trace` to `w`.
pub fn write_csv<W: std::io::Write>(trace: &MetricsTrace, w: W) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER).map_err(csv_error)?;
    for s in &trace.steps {
        for m in &s.servers {
            out.write_record([
                s.step.to_string(),
                s.phase.as_str().to_string(),
                m.server_id.to_string(),
                sig17(m.loss),
                sig17(m.grad_norm),
                sig17(s.delta),
                sig17(s.max_pairwise),
                s.filter_rejects.to_string(),
                s.pulls.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `trace` to the file at `path`.
pub fn emit_csv(trace: &MetricsTrace, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(trace, std::io::BufWriter::new(file))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

/// Rebuilds the CSV-visible part of a trace from its rows.
pub fn trace_from_rows(rows: &[CsvRow]) -> Result<MetricsTrace> {
    let mut trace = MetricsTrace::default();
    for row in rows {
        let phase: PhaseTag = row.phase.parse()?;
        let server = ServerMetrics {
            server_id: row.server_id,
            loss: row.loss,
            grad_norm: row.grad_norm,
        };
        match trace.steps.last_mut() {
            Some(s) if s.step == row.step => s.servers.push(server),
            _ => trace.steps.push(StepMetrics {
                step: row.step,
                phase,
                servers: vec![server],
                delta: row.delta,
                max_pairwise: row.max_pairwise,
                filter_rejects: row.filter_rejects,
                pulls: row.pulls,
                false_negatives: 0,
                false_positives: 0,
                fallbacks: 0,
                byzantine_selected: 0,
                models: None,
            }),
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step() -> MetricsTrace {
        MetricsTrace {
            steps: vec![StepMetrics {
                step: 0,
                phase: PhaseTag::Gather,
                servers: vec![ServerMetrics {
                    server_id: 0,
                    loss: 0.1,
                    grad_norm: std::f64::consts::PI,
                }],
                delta: 1.0 / 3.0,
                max_pairwise: 2.0f64.sqrt() / 7.0,
                filter_rejects: 1,
                pulls: 2,
                false_negatives: 0,
                false_positives: 0,
                fallbacks: 0,
                byzantine_selected: 0,
                models: None,
            }],
        }
    }

    #[test]
    fn single_row_file() {
        let mut buf = Vec::new();
        write_csv(&one_step(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "step,phase,server_id,loss,grad_norm,delta,max_pairwise,filter_rejects,pulls"
        );
        assert!(lines[1].starts_with("0,gather,0,1.0000000000000001e-1,"));
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(matches!(
            write_csv(&MetricsTrace::default(), Vec::new()),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn parse_back_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let trace = one_step();
        emit_csv(&trace, &path).unwrap();
        let back = trace_from_rows(&read_csv(&path).unwrap()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -2.5e-7, 0.0] {
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
    }
}
