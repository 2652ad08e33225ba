//! Append-only CSV metric log.
//!
//! Rows follow a single header line. Each run's effective configuration is
//! written before its rows as `# <run_id>: key = value` comment lines.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::train::EpochRecord;

pub const HEADER: [&str; 7] = [
    "run_id",
    "epoch",
    "split",
    "loss_name",
    "surrogate_loss",
    "true_metric",
    "wallclock_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub run_id: String,
    pub epoch: usize,
    pub split: String,
    pub loss_name: String,
    pub surrogate_loss: Option<f64>,
    pub true_metric: Option<f64>,
    pub wallclock_s: f64,
}

impl LogRow {
    pub fn from_record(run_id: &str, loss_name: &str, r: &EpochRecord) -> Self {
        LogRow {
            run_id: run_id.to_string(),
            epoch: r.epoch,
            split: r.split.name().to_string(),
            loss_name: loss_name.to_string(),
            surrogate_loss: r.surrogate_loss,
            true_metric: r.true_metric.is_finite().then_some(r.true_metric),
            wallclock_s: r.wallclock_s,
        }
    }
}

/// A log file; `None` path keeps rows in memory only.
#[derive(Debug, Default)]
pub struct MetricLog {
    path: Option<PathBuf>,
    rows: Vec<LogRow>,
}

impl MetricLog {
    pub fn in_memory() -> Self {
        MetricLog::default()
    }

    /// Opens `path` for appending, writing the header if the file is new.
    pub fn append_to(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if fresh {
            fs::write(path, format!("{}\n", HEADER.join(",")))?;
        }
        Ok(MetricLog {
            path: Some(path.to_path_buf()),
            rows: Vec::new(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Rows written through this handle.
    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    fn append_raw(&self, text: &str) -> Result<()> {
        if let Some(path) = &self.path {
            OpenOptions::new()
                .append(true)
                .open(path)?
                .write_all(text.as_bytes())?;
        }
        Ok(())
    }

    pub fn write_config(&mut self, run_id: &str, pairs: &[(String, String)]) -> Result<()> {
        let text: String = pairs
            .iter()
            .map(|(k, v)| format!("# {run_id}: {k} = {v}\n"))
            .collect();
        self.append_raw(&text)
    }

    pub fn push(&mut self, row: LogRow) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.serialize(&row)?;
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        self.append_raw(&String::from_utf8_lossy(&bytes))?;
        self.rows.push(row);
        Ok(())
    }
}

/// Reads every row of a log, skipping configuration comments.
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
