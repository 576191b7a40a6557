//! Aggregates polluted-evaluation series found under a directory into one
//! table: one row per series, columns `ACC_+0..ACC_+k`, `MA_k`, `ADR_k`.

use std::io::Write;
use std::path::Path;

use pgrpo_core::eval::{accuracy_degradation, mean_accuracy, MetricMode};
use walkdir::WalkDir;

use crate::error::{io_err, Error, Result};
use crate::logs::read_series;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Path of the series relative to the runs directory, without extension.
    pub method: String,
    pub acc: Vec<f64>,
    pub mean_accuracy: f64,
    pub degradation: f64,
}

fn is_series(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().next().map(str::trim) == Some("k,acc"))
}

/// Collects every `*.csv` with a `k,acc` header, sorted by path. All series
/// must have the same length (at least two entries).
pub fn collect(runs: &Path, mode: MetricMode) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for entry in WalkDir::new(runs).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io { path: runs.to_path_buf(), cause: e.into() })?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "csv") || !is_series(path)? {
            continue;
        }
        let acc = read_series(path)?;
        if acc.len() < 2 {
            return Err(Error::Format { path: path.to_path_buf(), message: "series needs at least k=0 and k=1".into() });
        }
        if let Some(first) = rows.first().map(|r: &ReportRow| r.acc.len()) {
            if first != acc.len() {
                return Err(Error::Format { path: path.to_path_buf(), message: format!("series length {} differs from {first}", acc.len()) });
            }
        }
        let k = acc.len() - 1;
        let method = path.strip_prefix(runs).unwrap_or(path).with_extension("");
        rows.push(ReportRow {
            method: method.to_string_lossy().replace('\\', "/"),
            mean_accuracy: mean_accuracy(&acc, k, mode)?,
            degradation: accuracy_degradation(&acc, k, mode)?,
            acc,
        });
    }
    Ok(rows)
}

pub fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = rows.first().map_or(0, |r| r.acc.len().saturating_sub(1));
    let mut header = vec!["method".to_string()];
    header.extend((0..=k).map(|i| format!("ACC_+{i}")));
    header.push(format!("MA_{k}"));
    header.push(format!("ADR_{k}"));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.method.clone()];
        rec.extend(row.acc.iter().map(|a| format!("{a:.2}")));
        rec.push(format!("{:.2}", row.mean_accuracy));
        rec.push(format!("{:.2}", row.degradation));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
