//! JSON-Lines datasets, one instance per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pgrpo_core::synth::{dataset_stats, Instance};

use crate::error::{io_err, Error, Result};

pub fn write_jsonl<W: Write>(mut out: W, dataset: &[Instance]) -> std::io::Result<()> {
    for inst in dataset {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads instances, validating each; `origin` names the source in errors.
/// Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(input: R, origin: &Path) -> Result<Vec<Instance>> {
    let mut dataset = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: origin.to_path_buf(), line: i + 1, message };
        let inst: Instance = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        inst.validate().map_err(|e| parse_err(e.to_string()))?;
        dataset.push(inst);
    }
    Ok(dataset)
}

pub fn save_dataset(path: &Path, dataset: &[Instance]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl(BufWriter::new(file), dataset).map_err(io_err(path))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Instance>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_jsonl(BufReader::new(file), path)
}

/// `metric,value` rows summarizing a dataset.
pub fn write_stats<W: Write>(out: W, dataset: &[Instance]) -> Result<()> {
    let stats = dataset_stats(dataset)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    for (name, value) in stats.rows() {
        w.write_record([name.to_string(), value.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
