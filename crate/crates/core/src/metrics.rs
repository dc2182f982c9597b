//! Append-only JSON-lines metrics log: one record per log interval so partial
//! runs stay analyzable.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossBreakdown;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    /// Known-class mAP of the teacher when this interval ran an evaluation.
    pub map: Option<f64>,
    pub wall_seconds: f64,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Open for appending (prior records are kept; resumed runs extend them).
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsWriter { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parse a metrics file, skipping malformed lines; returns the records and
/// the number of lines skipped.
pub fn read_metrics(path: &Path) -> Result<(Vec<MetricsRecord>, usize)> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("skipping malformed metrics line: {e}");
                skipped += 1;
            }
        }
    }
    Ok((records, skipped))
}
