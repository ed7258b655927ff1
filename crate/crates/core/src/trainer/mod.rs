//! Training strategies with exact backprop accounting.
//!
//! Every strategy runs through [`train`], which owns the epoch loop,
//! learning-rate schedule, checkpoints and per-epoch records; the
//! per-batch work differs by [`Strategy`].

mod eval;
mod loops;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackConfig, InitMode};
use crate::engine::{Batch, LossKind, LrSchedule, ModelParams, OptimState, Tensor};
use crate::error::{Error, Result};
use crate::scheduler::{self, Baseline};

pub use eval::{best_epoch, evaluate, select_best_checkpoint};
pub use loops::{train, train_with_observer};

/// Replay-growth rule for plain DEAT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeatCriterion {
    Interval { d: usize },
    Accuracy { frac: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Standard,
    /// PGD-i adversarial training.
    PgdAt { steps: usize },
    /// FREE-m: `replays` simultaneous updates per minibatch.
    Free { replays: usize },
    /// FGSM training from a uniform start.
    Ufgsm,
    Deat { criterion: DeatCriterion },
    /// DEAT driven by the gradient-magnitude threshold.
    Mdeat,
    /// Magnitude-guided PGD with at most `max_steps` attack iterations.
    Mpgd { max_steps: usize },
    /// U-FGSM with changing-ratio early stopping.
    Mufgsm { window: usize, gamma: f64 },
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Standard => "standard".into(),
            Strategy::PgdAt { steps } => format!("pgd-{steps}"),
            Strategy::Free { replays } => format!("free-{replays}"),
            Strategy::Ufgsm => "ufgsm".into(),
            Strategy::Deat { criterion: DeatCriterion::Interval { d } } => format!("deat-{d}"),
            Strategy::Deat { criterion: DeatCriterion::Accuracy { frac } } => {
                format!("deat-{}%", (frac * 100.0).round())
            }
            Strategy::Mdeat => "mdeat".into(),
            Strategy::Mpgd { max_steps } => format!("mpgd-{max_steps}"),
            Strategy::Mufgsm { .. } => "mufgsm".into(),
        }
    }

    /// Closed-form cost for strategies whose schedule does not depend on
    /// training signals.
    pub fn predicted_backprops(&self, epochs: usize, batches: usize) -> Option<u64> {
        let (t, m) = (epochs as u64, batches as u64);
        match *self {
            Strategy::Standard => Some(scheduler::baseline_backprops(Baseline::Standard, t, m)),
            Strategy::PgdAt { steps } => {
                Some(scheduler::baseline_backprops(Baseline::PgdAt(steps as u64), t, m))
            }
            Strategy::Free { replays } => {
                Some(scheduler::baseline_backprops(Baseline::Free(replays as u64), t, m))
            }
            Strategy::Ufgsm => Some(scheduler::baseline_backprops(Baseline::Ufgsm, t, m)),
            Strategy::Deat { criterion: DeatCriterion::Interval { d } } => {
                Some(scheduler::interval_backprops(t, d as u64, m))
            }
            _ => None,
        }
    }
}

/// Everything a training run needs besides data and initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training adversary: radius, step size, start and domain clamp.
    pub attack: AttackConfig,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Relax parameter of the magnitude threshold.
    pub gamma: f64,
    /// Upper bound on the replay count.
    pub cap: Option<usize>,
    pub seed: u64,
    /// Keep every `checkpoint_stride`-th epoch's parameters.
    pub checkpoint_stride: usize,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, epochs: usize, attack: AttackConfig) -> Self {
        Self {
            strategy,
            epochs,
            batch_size: 64,
            attack,
            lr: LrSchedule::default(),
            momentum: OptimState::DEFAULT_MOMENTUM,
            weight_decay: OptimState::DEFAULT_WEIGHT_DECAY,
            gamma: 1.0,
            cap: None,
            seed: 0,
            checkpoint_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("strategy.batch_size", "must be at least 1"));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::config("strategy.checkpoint_stride", "must be at least 1"));
        }
        if self.strategy != Strategy::Standard {
            self.attack.validate()?;
        }
        self.lr.validate()?;
        if !(self.gamma > 0.0) {
            return Err(Error::config("strategy.gamma", "must be positive"));
        }
        if self.cap == Some(0) {
            return Err(Error::config("strategy.cap", "must be at least 1"));
        }
        match self.strategy {
            Strategy::PgdAt { steps: 0 } => Err(Error::config("strategy.steps", "must be at least 1")),
            Strategy::Mpgd { max_steps: 0 } => Err(Error::config("strategy.steps", "must be at least 1")),
            Strategy::Free { replays: 0 } => Err(Error::config("strategy.replays", "must be at least 1")),
            Strategy::Deat { criterion: DeatCriterion::Interval { d: 0 } } => {
                Err(Error::config("strategy.d", "must be at least 1"))
            }
            Strategy::Deat { criterion: DeatCriterion::Accuracy { frac } } if !(0.0..=1.0).contains(&frac) => {
                Err(Error::config("strategy.frac", "must lie in [0, 1]"))
            }
            Strategy::Mufgsm { window, gamma } => {
                if window == 0 {
                    Err(Error::config("strategy.window", "must be at least 1"))
                } else if !(gamma > 0.0) {
                    Err(Error::config("strategy.gamma", "must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Labeled examples with inputs in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let (n, _) = inputs.dims2()?;
        if n != labels.len() {
            return Err(Error::Dimension(format!("{n} inputs but {} labels", labels.len())));
        }
        if n_classes < 2 {
            return Err(Error::InvalidTask("need at least two classes".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Range(format!("label {y} with {n_classes} classes")));
        }
        Ok(Self { inputs, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::new(
            self.inputs.select_rows(indices)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        })
    }

    /// Number of full minibatches; a ragged tail is dropped during training.
    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len() / batch_size
    }

    /// Frequency of the most common label.
    pub fn majority_fraction(&self) -> f64 {
        let mut counts = vec![0usize; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }
}

/// One completed training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Replays (or attack iterations) per minibatch during this epoch.
    pub r: usize,
    pub l_x: f64,
    /// Magnitude threshold after the end-of-epoch update.
    pub threshold: Option<f64>,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub train_acc: f64,
    pub backprops_cumulative: u64,
    pub wall_ms: f64,
}

/// Accuracy of the selected checkpoint under one evaluation adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustAccuracy {
    pub adversary: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub natural_acc: f64,
    pub robust: Vec<RobustAccuracy>,
    pub best_checkpoint_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: String,
    pub batches_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub stop_epoch: Option<usize>,
    pub summary: Option<FinalSummary>,
}

impl TrainReport {
    pub fn total_backprops(&self) -> u64 {
        self.epochs.last().map_or(0, |e| e.backprops_cumulative)
    }

    pub fn l_x_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.l_x).collect()
    }

    pub fn wall_ms(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_ms).sum()
    }

    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.wall_ms = 0.0;
        }
        r
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    /// `(epoch, parameters after that epoch)`.
    pub checkpoints: Vec<(usize, ModelParams)>,
    pub report: TrainReport,
}

/// Default training adversary for a strategy at radius `epsilon`.
///
/// Single-step and replay methods step by `1.25 epsilon` (the ratio of
/// 10/255 to 8/255); PGD-based methods by `epsilon / 4` (2/255 to 8/255).
/// Replay methods start from zero and leave the pixel domain unclamped.
pub fn default_training_attack(strategy: &Strategy, epsilon: f64) -> AttackConfig {
    let (alpha, init) = match strategy {
        Strategy::PgdAt { .. } | Strategy::Mpgd { .. } => (epsilon / 4.0, InitMode::Uniform),
        Strategy::Ufgsm | Strategy::Mufgsm { .. } => (1.25 * epsilon, InitMode::Uniform),
        Strategy::Free { .. } => (epsilon, InitMode::Zero),
        _ => (1.25 * epsilon, InitMode::Zero),
    };
    AttackConfig {
        epsilon,
        alpha,
        steps: 1,
        init,
        loss: LossKind::CrossEntropy,
        clamp_domain: false,
    }
}
