//! CSV tables: training and reward logs, metric series and summaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use pgrpo_core::eval::MetricMode;
use pgrpo_core::train::CompletionRecord;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Writes `rows` with a header derived from the row type's field names.
pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_rows(std::io::BufWriter::new(file), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub step: usize,
    pub completion_idx: usize,
    pub r_f: f64,
    pub r_h: f64,
    pub r_c: f64,
    pub r_a: f64,
    pub adv_h: f64,
    pub adv_c: f64,
    pub adv_f: f64,
    pub adv_a: f64,
}

impl From<&CompletionRecord> for RewardRow {
    fn from(r: &CompletionRecord) -> Self {
        RewardRow {
            step: r.update,
            completion_idx: r.completion_idx,
            r_f: r.rewards.format,
            r_h: r.rewards.helpfulness,
            r_c: r.rewards.conclusion,
            r_a: r.rewards.answer.unwrap_or(0.0),
            adv_h: r.adv_h,
            adv_c: r.adv_c,
            adv_f: r.adv_f,
            adv_a: r.adv_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub k: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mode: MetricMode,
    pub value: f64,
}

pub fn series_rows(acc: &[f64]) -> Vec<SeriesRow> {
    acc.iter().enumerate().map(|(k, &acc)| SeriesRow { k, acc }).collect()
}

/// Reads a `k,acc` table whose `k` column runs 0, 1, 2, ...
pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers != vec!["k", "acc"] {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("expected header k,acc, found {}", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut acc = Vec::new();
    for (i, row) in reader.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 2, message: e.to_string() })?;
        if row.k != i {
            return Err(Error::Parse { path: path.to_path_buf(), line: i + 2, message: format!("expected k={i}, found {}", row.k) });
        }
        acc.push(row.acc);
    }
    Ok(acc)
}
