use rand::Rng;

use super::Dataset;
use crate::adversary::{self, AttackConfig};
use crate::engine::{loss, Engine, ModelParams};
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 256;

/// Natural accuracy (`attack == None`) or accuracy on `x + delta` from
/// the configured attack.
pub fn evaluate<E: Engine + ?Sized, R: Rng + ?Sized>(
    engine: &mut E,
    params: &ModelParams,
    data: &Dataset,
    attack: Option<&AttackConfig>,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidTask("cannot evaluate on an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for idx in indices.chunks(EVAL_BATCH) {
        let batch = data.batch(idx)?;
        let inputs = match attack {
            None => batch.inputs.clone(),
            Some(cfg) => {
                let outcome = adversary::pgd_attack(engine, params, &batch, cfg, rng)?;
                batch.inputs.add(&outcome.state.delta)?
            }
        };
        let logits = engine.logits(params, &inputs)?;
        correct += loss::count_correct(&logits, &batch.labels);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Earliest index of the maximum.
pub fn best_epoch(accuracies: &[f64]) -> Result<usize> {
    if accuracies.is_empty() {
        return Err(Error::InvalidTask("no checkpoints to choose from".into()));
    }
    let mut best = 0;
    for (i, &a) in accuracies.iter().enumerate() {
        if a > accuracies[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Scores every checkpoint under `attack` on `validation` and returns the
/// index of the most robust one (earliest on ties) with all scores.
pub fn select_best_checkpoint<E: Engine + ?Sized, R: Rng + ?Sized>(
    engine: &mut E,
    checkpoints: &[ModelParams],
    validation: &Dataset,
    attack: &AttackConfig,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidTask("no checkpoints to choose from".into()));
    }
    let scores = checkpoints
        .iter()
        .map(|p| evaluate(engine, p, validation, Some(attack), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((best_epoch(&scores)?, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_epoch_cases() {
        assert_eq!(best_epoch(&[0.1, 0.2, 0.3, 0.4]).unwrap(), 3);
        // robustness collapses after epoch 3
        assert_eq!(best_epoch(&[0.2, 0.35, 0.41, 0.40, 0.05, 0.0]).unwrap(), 2);
        assert_eq!(best_epoch(&[0.3, 0.5, 0.5]).unwrap(), 1);
        assert_eq!(best_epoch(&[0.7]).unwrap(), 0);
        assert!(best_epoch(&[]).is_err());
    }
}
