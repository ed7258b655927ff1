//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triangular cycle over the whole run: 0 -> `max_lr` -> 0.
pub fn lr_cyclic(progress: f64, max_lr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::Range(format!("progress {progress} outside [0, 1]")));
    }
    Ok(if progress <= 0.5 {
        max_lr * progress / 0.5
    } else {
        max_lr * (1.0 - progress) / 0.5
    })
}

/// `base * factor^k` where `k` counts the milestones at or before `epoch`.
///
/// `epoch` is zero-based, so with milestones `[25, 40]` the first decay
/// applies after 25 completed epochs.
pub fn lr_multistep(epoch: usize, base: f64, milestones: &[usize], factor: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base * factor.powi(passed as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { lr: f64 },
    Cyclic { max_lr: f64 },
    Multistep { base: f64, milestones: Vec<usize>, factor: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Multistep {
            base: 0.05,
            milestones: vec![25, 40],
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Constant { lr } if !(*lr >= 0.0) => {
                Err(Error::config("lr.lr", "must be non-negative"))
            }
            LrSchedule::Cyclic { max_lr } if !(*max_lr >= 0.0) => {
                Err(Error::config("lr.max_lr", "must be non-negative"))
            }
            LrSchedule::Multistep { base, milestones, factor } => {
                if !(*base >= 0.0) {
                    return Err(Error::config("lr.base", "must be non-negative"));
                }
                if !(*factor > 0.0) {
                    return Err(Error::config("lr.factor", "must be positive"));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("lr.milestones", "must be strictly increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Rate for a zero-based `epoch` at overall run `progress` in `[0, 1]`.
    ///
    /// Cyclic schedules advance per iteration; the others per epoch.
    pub fn rate(&self, epoch: usize, progress: f64) -> Result<f64> {
        match self {
            LrSchedule::Constant { lr } => Ok(*lr),
            LrSchedule::Cyclic { max_lr } => lr_cyclic(progress.clamp(0.0, 1.0), *max_lr),
            LrSchedule::Multistep { base, milestones, factor } => {
                Ok(lr_multistep(epoch, *base, milestones, *factor))
            }
        }
    }
}
