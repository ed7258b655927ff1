//! Batch-replay scheduling as a value-level state machine.
//!
//! Three criteria decide when the replay count `r` grows: a fixed interval
//! of `d` epochs, a training-accuracy threshold, and the gradient-magnitude
//! rule that compares each epoch's `l_X` against a `gamma`-relaxed record.
//! The module also holds the closed-form backprop cost of every strategy,
//! the step-size adjustment used by magnitude-guided PGD, and the
//! changing-ratio early stop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When to grow the replay count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// One more replay every `d` epochs.
    Interval { d: usize },
    /// One more replay whenever training accuracy exceeds `frac`.
    Accuracy { frac: f64 },
    /// One more replay whenever `l_X` exceeds the running threshold.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySchedule {
    pub r: usize,
    pub threshold: Option<f64>,
    pub gamma: f64,
    pub criterion: Criterion,
    pub cap: Option<usize>,
    /// Last epoch folded into the state; 0 before the first.
    pub epoch: usize,
}

/// What an epoch reports back to its schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochSignal {
    pub train_acc: f64,
    pub l_x: f64,
}

impl ReplaySchedule {
    pub fn new(criterion: Criterion, gamma: f64, cap: Option<usize>) -> Result<Self> {
        match criterion {
            Criterion::Interval { d: 0 } => {
                return Err(Error::config("strategy.d", "must be at least 1"))
            }
            Criterion::Accuracy { frac } if !(0.0..=1.0).contains(&frac) => {
                return Err(Error::Range(format!("accuracy threshold {frac} outside [0, 1]")))
            }
            _ => {}
        }
        if !(gamma > 0.0) {
            return Err(Error::config("strategy.gamma", "must be positive"));
        }
        if cap == Some(0) {
            return Err(Error::config("strategy.cap", "must be at least 1"));
        }
        Ok(Self {
            r: 1,
            threshold: None,
            gamma,
            criterion,
            cap,
            epoch: 0,
        })
    }

    pub fn interval(d: usize) -> Result<Self> {
        Self::new(Criterion::Interval { d }, 1.0, None)
    }

    pub fn accuracy(frac: f64) -> Result<Self> {
        Self::new(Criterion::Accuracy { frac }, 1.0, None)
    }

    pub fn magnitude(gamma: f64, cap: Option<usize>) -> Result<Self> {
        Self::new(Criterion::Magnitude, gamma, cap)
    }

    fn bump(&mut self) {
        let next = self.r + 1;
        self.r = match self.cap {
            Some(c) => next.min(c),
            None => next,
        };
    }

    /// Folds epoch `epoch` (1-based, consecutive) into the schedule.
    pub fn end_epoch(&self, epoch: usize, signal: EpochSignal) -> Result<Self> {
        if epoch == 0 || epoch != self.epoch + 1 {
            return Err(Error::Sequencing(format!(
                "epoch {epoch} reported after epoch {}",
                self.epoch
            )));
        }
        let mut next = match self.criterion {
            Criterion::Interval { d } => {
                let mut s = self.clone();
                s.r = interval_criterion(epoch + 1, d);
                if let Some(c) = s.cap {
                    s.r = s.r.min(c);
                }
                s
            }
            Criterion::Accuracy { frac } => accuracy_criterion(signal.train_acc, frac, self)?,
            Criterion::Magnitude => return mdeat_update(epoch, signal.l_x, self),
        };
        next.epoch = epoch;
        Ok(next)
    }
}

/// Replay count in force during `epoch` (1-based): `ceil(epoch / d)`.
pub fn interval_criterion(epoch: usize, d: usize) -> usize {
    assert!(d >= 1, "interval d must be at least 1");
    epoch.max(1).div_ceil(d)
}

/// Adds one replay when `train_acc > frac`.
pub fn accuracy_criterion(train_acc: f64, frac: f64, schedule: &ReplaySchedule) -> Result<ReplaySchedule> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Range(format!("accuracy threshold {frac} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&train_acc) {
        return Err(Error::Range(format!("training accuracy {train_acc} outside [0, 1]")));
    }
    let mut next = schedule.clone();
    if train_acc > frac {
        next.bump();
    }
    Ok(next)
}

/// End-of-epoch update of the magnitude-guided schedule.
///
/// Epoch 1 always adds a replay (it trained on natural examples); epoch 2
/// sets the threshold to `gamma * l_X`; later epochs add a replay and
/// raise the threshold only when `l_X` strictly exceeds it.
pub fn mdeat_update(epoch: usize, l_x: f64, schedule: &ReplaySchedule) -> Result<ReplaySchedule> {
    if epoch == 0 || epoch != schedule.epoch + 1 {
        return Err(Error::Sequencing(format!(
            "epoch {epoch} reported after epoch {}",
            schedule.epoch
        )));
    }
    let mut next = schedule.clone();
    match epoch {
        1 => next.bump(),
        2 => next.threshold = Some(schedule.gamma * l_x),
        _ => {
            let threshold = schedule.threshold.ok_or_else(|| {
                Error::Sequencing("threshold unset after epoch 2".into())
            })?;
            if l_x > threshold {
                next.threshold = Some(schedule.gamma * l_x);
                next.bump();
            }
        }
    }
    next.epoch = epoch;
    Ok(next)
}

/// `ceil(T (T + d) / 2d) * M` backprops for the interval criterion.
pub fn expected_backprops(epochs: u64, d: u64, batches: u64) -> u64 {
    assert!(d >= 1, "interval d must be at least 1");
    (epochs * (epochs + d)).div_ceil(2 * d) * batches
}

/// Exact interval-criterion cost, `M * sum_t ceil(t / d)`.
pub fn interval_backprops(epochs: u64, d: u64, batches: u64) -> u64 {
    assert!(d >= 1, "interval d must be at least 1");
    let full = epochs / d;
    let rest = epochs % d;
    (d * full * (full + 1) / 2 + rest * (full + 1)) * batches
}

/// Baselines whose cost is fixed per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Standard,
    /// PGD-i training: i attack steps plus one update.
    PgdAt(u64),
    Ufgsm,
    /// FREE with m replays.
    Free(u64),
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    /// Parses `standard`, `ufgsm`, `pgd-7`, `free-8`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("strategy", format!("unknown baseline `{s}`"));
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "standard" => Ok(Baseline::Standard),
            "ufgsm" | "u-fgsm" => Ok(Baseline::Ufgsm),
            _ => {
                let (name, param) = lower.rsplit_once('-').ok_or_else(bad)?;
                let k: u64 = param.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                match name {
                    "pgd" => Ok(Baseline::PgdAt(k)),
                    "free" => Ok(Baseline::Free(k)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

pub fn baseline_backprops(strategy: Baseline, epochs: u64, batches: u64) -> u64 {
    let per_batch = match strategy {
        Baseline::Standard => 1,
        Baseline::PgdAt(i) => i + 1,
        Baseline::Ufgsm => 2,
        Baseline::Free(m) => m,
    };
    per_batch * batches * epochs
}

/// `l_X` per completed epoch; `values()[t - 1]` is epoch `t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeTrace {
    values: Vec<f64>,
}

impl MagnitudeTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, l_x: f64) {
        self.values.push(l_x);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `l_X` at 1-based epoch `t`.
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.values.get(i)).copied()
    }
}

impl From<Vec<f64>> for MagnitudeTrace {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// `R^t = (l_X^t - l_X^{t-m}) / m`, defined for `t > m`.
pub fn change_ratio(trace: &MagnitudeTrace, t: usize, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::config("strategy.window", "must be at least 1"));
    }
    if t <= m {
        return Err(Error::NotYetDefined(format!("ratio at epoch {t} needs t > {m}")));
    }
    let now = trace
        .at(t)
        .ok_or_else(|| Error::NotYetDefined(format!("no l_X recorded for epoch {t}")))?;
    let then = trace.at(t - m).expect("t - m < t");
    Ok((now - then) / m as f64)
}

/// `R^t > gamma * R^{t-1}`.
pub fn early_stop_check(ratio: f64, prev_ratio: f64, gamma: f64) -> bool {
    ratio > gamma * prev_ratio
}

/// Magnitude-based early stopping over a growing trace.
///
/// A stop additionally requires `R^t > 0`: the signal is a surge in `l_X`,
/// and with negative ratios the bare comparison fires on ordinary decay.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub m: usize,
    pub gamma: f64,
    pub prev_ratio: Option<f64>,
}

impl EarlyStopState {
    pub fn new(m: usize, gamma: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("strategy.window", "must be at least 1"));
        }
        if !(gamma > 0.0) {
            return Err(Error::config("strategy.gamma", "must be positive"));
        }
        Ok(Self { m, gamma, prev_ratio: None })
    }

    /// Consumes the newest trace entry; returns `true` when training should stop.
    pub fn observe(&mut self, trace: &MagnitudeTrace) -> Result<bool> {
        let t = trace.len();
        if t <= self.m {
            return Ok(false);
        }
        let ratio = change_ratio(trace, t, self.m)?;
        let stop = match self.prev_ratio {
            Some(prev) => ratio > 0.0 && early_stop_check(ratio, prev, self.gamma),
            None => false,
        };
        self.prev_ratio = Some(ratio);
        Ok(stop)
    }
}

/// First 1-based epoch at which [`EarlyStopState`] stops on `trace`.
pub fn first_stop_epoch(trace: &[f64], m: usize, gamma: f64) -> Result<Option<usize>> {
    let mut state = EarlyStopState::new(m, gamma)?;
    let mut seen = MagnitudeTrace::new();
    for &v in trace {
        seen.push(v);
        if state.observe(&seen)? {
            return Ok(Some(seen.len()));
        }
    }
    Ok(None)
}

/// `alpha* = max(alpha, eps / r)`, the smallest step with `alpha* r >= eps`.
pub fn adjust_step_size(r: usize, epsilon: f64, alpha: f64) -> f64 {
    assert!(r >= 1, "replay count must be at least 1");
    let alpha_star = alpha.max(epsilon / r as f64);
    if alpha_star * (r as f64) < epsilon {
        // eps / r can round low; step to the next float up
        f64::from_bits(alpha_star.to_bits() + 1)
    } else {
        alpha_star
    }
}
