//! Seed-replicated comparisons across several configurations.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use super::log::SummaryRow;
use super::run::run;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    pub runs: Vec<SummaryRow>,
    /// `(seed, error message)` for every run that failed.
    pub failures: Vec<(u64, String)>,
}

impl SweepRow {
    /// Metric names in column order.
    pub fn metric_names(&self) -> Vec<String> {
        let mut names = vec!["Natural".to_string()];
        if let Some(r) = self.runs.first() {
            names.extend(r.robust.iter().map(|(n, _)| n.clone()));
        }
        names.extend(["backprops".into(), "Time".into()]);
        names
    }

    pub fn metric(&self, name: &str) -> Option<MeanStd> {
        let values: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| match name {
                "Natural" => Some(r.natural),
                "backprops" => Some(r.backprops as f64),
                "Time" => Some(r.time_s),
                adv => r.robust_acc(adv),
            })
            .collect();
        MeanStd::of(&values)
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let names = self.rows.iter().find(|r| !r.runs.is_empty()).map_or_else(
            || vec!["Natural".to_string(), "backprops".into(), "Time".into()],
            SweepRow::metric_names,
        );
        let mut header = vec!["label".to_string(), "ok".into(), "failed".into()];
        for n in &names {
            header.push(format!("{n}_mean"));
            header.push(format!("{n}_std"));
        }
        header.push("errors".into());
        let mut out = header.join(",") + "\n";
        for row in &self.rows {
            let mut cols = vec![row.label.clone(), row.runs.len().to_string(), row.failures.len().to_string()];
            for n in &names {
                match row.metric(n) {
                    Some(m) => cols.extend([format!("{:.4}", m.mean), format!("{:.4}", m.std)]),
                    None => cols.extend([String::new(), String::new()]),
                }
            }
            let errors: Vec<String> = row
                .failures
                .iter()
                .map(|(s, e)| format!("seed {s}: {}", e.replace(['"', ','], " ")))
                .collect();
            cols.push(format!("\"{}\"", errors.join("; ")));
            out += &(cols.join(",") + "\n");
        }
        out
    }
}

/// `label` for one alpha/gamma combination.
pub fn alpha_gamma_grid(base: &RunConfig, alphas: &[f64], gammas: &[f64]) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &alpha in alphas {
        for &gamma in gammas {
            let mut config = base.clone();
            config.attack.alpha = Some(alpha);
            config.strategy.gamma = Some(gamma);
            points.push(SweepPoint {
                label: format!("alpha={alpha} gamma={gamma}"),
                config,
            });
        }
    }
    points
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs every point for every seed in parallel. Each run writes to
/// `<point out_dir>/<label>/seed-<s>`; failed runs are recorded on their row.
pub fn sweep(points: &[SweepPoint], seeds: &[u64]) -> Result<SweepTable> {
    if seeds.is_empty() {
        return Err(Error::config("sweep.seeds", "need at least one seed"));
    }
    if points.is_empty() {
        return Err(Error::config("sweep.configs", "need at least one configuration"));
    }
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let results: Vec<(usize, u64, Result<SummaryRow>)> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let point = &points[p];
            let mut cfg = point.config.clone();
            cfg.seed = seed;
            cfg.out_dir = point.config.out_dir.join(dir_name(&point.label)).join(format!("seed-{seed}"));
            (p, seed, run(&cfg).map(|a| a.summary))
        })
        .collect();

    let mut rows: Vec<SweepRow> = points
        .iter()
        .map(|p| SweepRow {
            label: p.label.clone(),
            runs: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (p, seed, res) in results {
        match res {
            Ok(row) => rows[p].runs.push(row),
            Err(e) => rows[p].failures.push((seed, e.to_string())),
        }
    }
    Ok(SweepTable { seeds: seeds.to_vec(), rows })
}

pub fn write_table(path: &Path, table: &SweepTable) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, table.to_csv())?;
    Ok(())
}
