//! Line-delimited JSON epoch log and the CSV summary.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::EpochRecord;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLogRecord {
    pub schema: u32,
    pub run_id: String,
    pub epoch: usize,
    pub r: usize,
    pub l_x: f64,
    pub threshold: Option<f64>,
    pub lr: f64,
    pub train_acc: f64,
    pub backprops_cumulative: u64,
    pub wall_ms: f64,
}

impl EpochLogRecord {
    pub fn new(run_id: &str, e: &EpochRecord) -> Self {
        Self {
            schema: LOG_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            epoch: e.epoch,
            r: e.r,
            l_x: e.l_x,
            threshold: e.threshold,
            lr: e.lr,
            train_acc: e.train_acc,
            backprops_cumulative: e.backprops_cumulative,
            wall_ms: e.wall_ms,
        }
    }
}

/// Final line of a log whose run aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub schema: u32,
    pub run_id: String,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Epoch(EpochLogRecord),
    Failure(FailureRecord),
}

pub fn to_line<T: Serialize>(record: &T) -> Result<String> {
    serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))
}

pub fn append_line<W: Write, T: Serialize>(w: &mut W, record: &T) -> Result<()> {
    writeln!(w, "{}", to_line(record)?)?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub strategy: String,
    pub seed: u64,
    pub natural: f64,
    /// `(adversary name, robust accuracy)` in evaluation order.
    pub robust: Vec<(String, f64)>,
    pub backprops: u64,
    /// Training wall time in seconds.
    pub time_s: f64,
    pub best_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
}

fn opt(v: Option<usize>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl SummaryRow {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["run_id".to_string(), "strategy".into(), "seed".into(), "Natural".into()];
        cols.extend(self.robust.iter().map(|(n, _)| n.clone()));
        cols.extend(["Time".into(), "backprops".into(), "best_epoch".into(), "stop_epoch".into()]);
        cols.join(",")
    }

    pub fn csv_line(&self) -> String {
        let mut cols = vec![
            self.run_id.clone(),
            self.strategy.clone(),
            self.seed.to_string(),
            format!("{:.4}", self.natural),
        ];
        cols.extend(self.robust.iter().map(|(_, a)| format!("{a:.4}")));
        cols.extend([
            format!("{:.3}", self.time_s),
            self.backprops.to_string(),
            opt(self.best_epoch),
            opt(self.stop_epoch),
        ]);
        cols.join(",")
    }

    pub fn robust_acc(&self, adversary: &str) -> Option<f64> {
        self.robust.iter().find(|(n, _)| n == adversary).map(|&(_, a)| a)
    }
}
