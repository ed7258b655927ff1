//! One configured training run and its artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::data::Splits;
use super::log::{append_line, EpochLogRecord, FailureRecord, SummaryRow, LOG_SCHEMA_VERSION};
use crate::engine::{checkpoint, MlpEngine, ModelParams};
use crate::error::{Error, Result};
use crate::seeds::{SeedStreams, Stream};
use crate::trainer::{self, evaluate, select_best_checkpoint, FinalSummary, RobustAccuracy, TrainReport};

pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const SUMMARY: &str = "summary.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub report: TrainReport,
    pub summary: SummaryRow,
    /// Validation robust accuracy of each retained checkpoint.
    pub validation_scores: Vec<f64>,
}

pub fn run_id(cfg: &RunConfig) -> Result<String> {
    Ok(format!("{}-s{}", cfg.strategy.strategy()?.name(), cfg.seed))
}

/// Short category name for an error.
pub fn error_category(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Numeric { .. } => "numeric",
        Error::Config { .. } => "config",
        Error::Format(_) => "format",
        Error::Dimension(_) | Error::InvalidTask(_) | Error::Range(_) => "input",
        Error::Consistency(_) | Error::Sequencing(_) | Error::NotYetDefined(_) => "internal",
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::Numeric { .. } => 4,
        Error::Config { .. } | Error::Format(_) | Error::Dimension(_) | Error::InvalidTask(_) | Error::Range(_) => 2,
        _ => 1,
    }
}

pub fn initial_params(cfg: &RunConfig, splits: &Splits) -> Result<ModelParams> {
    let mut sizes = vec![splits.train.dim()];
    sizes.extend(&cfg.model.hidden);
    sizes.push(splits.train.n_classes);
    ModelParams::mlp(&sizes, &mut SeedStreams::new(cfg.seed).rng(Stream::Init))
}

/// Natural accuracy and accuracy under each configured adversary on the test split.
pub fn evaluate_params(cfg: &RunConfig, params: &ModelParams, splits: &Splits) -> Result<(f64, Vec<RobustAccuracy>)> {
    let mut engine = MlpEngine::new();
    let mut rng = SeedStreams::new(cfg.seed).rng(Stream::Evaluation);
    let natural = evaluate(&mut engine, params, &splits.test, None, &mut rng)?;
    let robust = cfg
        .eval
        .iter()
        .map(|adv| {
            let attack = adv.attack(cfg.attack.epsilon);
            Ok(RobustAccuracy {
                adversary: adv.name.clone(),
                accuracy: evaluate(&mut engine, params, &splits.test, Some(&attack), &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((natural, robust))
}

/// Trains, selects the most robust checkpoint on validation, evaluates it and
/// writes the epoch log, summary, report and checkpoint into `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let run_id = run_id(cfg)?;
    let splits = cfg.dataset.load(cfg.seed)?;
    let strategy_cfg = cfg.strategy_config()?;
    let init = initial_params(cfg, &splits)?;

    fs::create_dir_all(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join(EPOCH_LOG);
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    let mut log_err = None;
    let mut engine = MlpEngine::new();
    let trained = trainer::train_with_observer(&mut engine, &strategy_cfg, init, &splits.train, |rec| {
        if log_err.is_none() {
            log_err = append_line(&mut log, &EpochLogRecord::new(&run_id, rec)).err();
        }
    });
    if let Some(e) = log_err {
        return Err(e);
    }
    let outcome = match trained {
        Ok(o) => o,
        Err(e) => {
            let failure = FailureRecord {
                schema: LOG_SCHEMA_VERSION,
                run_id: run_id.clone(),
                error: error_category(&e).into(),
                message: e.to_string(),
            };
            append_line(&mut log, &failure)?;
            log.flush()?;
            return Err(e);
        }
    };
    log.flush()?;

    let (best_params, best_epoch, validation_scores) = if outcome.checkpoints.is_empty() || splits.validation.is_empty() {
        let last = outcome.checkpoints.last().map(|(e, _)| *e);
        (outcome.params.clone(), last, Vec::new())
    } else {
        let params: Vec<ModelParams> = outcome.checkpoints.iter().map(|(_, p)| p.clone()).collect();
        let attack = cfg.validation.attack(cfg.attack.epsilon);
        let mut rng = SeedStreams::new(cfg.seed).rng(Stream::Evaluation);
        let (idx, scores) = select_best_checkpoint(&mut engine, &params, &splits.validation, &attack, &mut rng)?;
        (params[idx].clone(), Some(outcome.checkpoints[idx].0), scores)
    };

    let (natural, robust) = evaluate_params(cfg, &best_params, &splits)?;
    let mut report = outcome.report;
    report.summary = Some(FinalSummary {
        natural_acc: natural,
        robust: robust.clone(),
        best_checkpoint_epoch: best_epoch,
    });
    let summary = SummaryRow {
        run_id: run_id.clone(),
        strategy: report.strategy.clone(),
        seed: cfg.seed,
        natural,
        robust: robust.into_iter().map(|r| (r.adversary, r.accuracy)).collect(),
        backprops: report.total_backprops(),
        time_s: report.wall_ms() / 1e3,
        best_epoch,
        stop_epoch: report.stop_epoch,
    };

    write_summary(&cfg.out_dir.join(SUMMARY), &summary)?;
    checkpoint::save(&best_params, &cfg.out_dir.join(CHECKPOINT))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(cfg.out_dir.join(REPORT), json)?;

    Ok(RunArtifacts {
        run_id,
        out_dir: cfg.out_dir.clone(),
        report,
        summary,
        validation_scores,
    })
}

pub fn write_summary(path: &Path, row: &SummaryRow) -> Result<()> {
    fs::write(path, format!("{}\n{}\n", row.csv_header(), row.csv_line()))?;
    Ok(())
}
