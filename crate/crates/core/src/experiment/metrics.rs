//! Per-epoch metrics rows and their CSV form.

use std::path::Path;

use serde::Deserialize;

use crate::error::{AtgError, Result};
use crate::sim::RunTrace;

pub const HEADER: [&str; 6] = [
    "epoch",
    "virtual_time_s",
    "normalized_error",
    "Q",
    "n_received",
    "scheme",
];

/// One CSV row; `epoch` counts from 1.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricRow {
    pub epoch: u64,
    pub virtual_time_s: f64,
    pub normalized_error: f64,
    #[serde(rename = "Q")]
    pub q: u64,
    pub n_received: usize,
    pub scheme: String,
}

pub fn rows_from_trace(trace: &RunTrace, scheme: &str) -> Vec<MetricRow> {
    trace
        .epochs
        .iter()
        .enumerate()
        .map(|(i, e)| MetricRow {
            epoch: i as u64 + 1,
            virtual_time_s: e.wall_clock.as_secs_f64(),
            normalized_error: e.error,
            q: e.result.total_q,
            n_received: e.result.received.len(),
            scheme: scheme.to_string(),
        })
        .collect()
}

/// Nine significant digits.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(AtgError::invalid("no epochs to write"));
    }
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    w.write_record(HEADER).map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            sig9(r.virtual_time_s),
            sig9(r.normalized_error),
            r.q.to_string(),
            r.n_received.to_string(),
            r.scheme.clone(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(csv_io)?;
    r.deserialize().map(|row| row.map_err(csv_io)).collect()
}

fn csv_io(e: csv::Error) -> AtgError {
    AtgError::Io(std::io::Error::other(e))
}
