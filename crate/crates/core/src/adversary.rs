//! l-infinity perturbations: initialization, signed-gradient steps,
//! projection onto the epsilon ball, PGD/CW iteration and the gradient
//! magnitude statistic used by the schedulers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Batch, Engine, LossKind, ModelParams, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Zero,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Radius of the l-infinity ball.
    pub epsilon: f64,
    /// Signed-gradient step size.
    pub alpha: f64,
    pub steps: usize,
    pub init: InitMode,
    pub loss: LossKind,
    /// Keep `x + delta` inside `[0, 1]`.
    pub clamp_domain: bool,
}

impl AttackConfig {
    /// PGD with `steps` iterations.
    pub fn pgd(epsilon: f64, alpha: f64, steps: usize) -> Self {
        Self {
            epsilon,
            alpha,
            steps,
            init: InitMode::Zero,
            loss: LossKind::CrossEntropy,
            clamp_domain: true,
        }
    }

    /// Single step of size epsilon from zero.
    pub fn fgsm(epsilon: f64) -> Self {
        Self::pgd(epsilon, epsilon, 1)
    }

    /// PGD on the margin loss (the CW-i adversary).
    pub fn cw(epsilon: f64, alpha: f64, steps: usize) -> Self {
        Self {
            loss: LossKind::Margin,
            ..Self::pgd(epsilon, alpha, steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("attack.epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("attack.alpha", format!("must be positive, got {}", self.alpha)));
        }
        if self.steps == 0 {
            return Err(Error::config("attack.steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Current perturbation of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub delta: Tensor,
}

pub fn init_perturbation<R: Rng + ?Sized>(
    shape: &[usize],
    mode: InitMode,
    epsilon: f64,
    rng: &mut R,
) -> Result<PerturbationState> {
    if !(epsilon > 0.0) {
        return Err(Error::Range(format!("epsilon {epsilon}")));
    }
    let delta = match mode {
        InitMode::Zero => Tensor::zeros(shape),
        InitMode::Uniform => {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| loop {
                    let v = rng.gen_range(-epsilon..epsilon);
                    // open interval on both ends
                    if v != -epsilon {
                        break v;
                    }
                })
                .collect();
            Tensor::new(shape.to_vec(), data)?
        }
    };
    Ok(PerturbationState { delta })
}

/// `sign` with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `delta + alpha * sign(grad)`.
pub fn fgsm_step(delta: &Tensor, grad_input: &Tensor, alpha: f64) -> Result<Tensor> {
    delta.zip_map(grad_input, |d, g| d + alpha * sign(g))
}

/// Clip into `[-eps, eps]`, then optionally so that `inputs + delta` stays in `[0, 1]`.
pub fn project(delta: &Tensor, inputs: &Tensor, epsilon: f64, clamp_domain: bool) -> Result<Tensor> {
    delta.zip_map(inputs, |d, x| {
        let d = d.clamp(-epsilon, epsilon);
        if clamp_domain {
            // re-clip: the subtraction can round one ulp past eps
            ((x + d).clamp(0.0, 1.0) - x).clamp(-epsilon, epsilon)
        } else {
            d
        }
    })
}

/// Outcome of an iterated attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub state: PerturbationState,
    /// Input gradient from the last attack iteration.
    pub last_grad: Tensor,
    /// Attack loss recorded at each iteration, before its step.
    pub losses: Vec<f64>,
}

/// `cfg.steps` rounds of gradient -> signed step -> projection.
///
/// Consumes exactly `cfg.steps` backpropagations from `engine`.
pub fn pgd_attack<E: Engine + ?Sized, R: Rng + ?Sized>(
    engine: &mut E,
    params: &ModelParams,
    batch: &Batch,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackOutcome> {
    if cfg.steps == 0 {
        return Err(Error::config("attack.steps", "must be at least 1"));
    }
    let mut delta = match cfg.init {
        InitMode::Zero => Tensor::zeros(batch.inputs.shape()),
        InitMode::Uniform => {
            let init = init_perturbation(batch.inputs.shape(), InitMode::Uniform, cfg.epsilon, rng)?;
            project(&init.delta, &batch.inputs, cfg.epsilon, cfg.clamp_domain)?
        }
    };
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut last_grad = Tensor::zeros(batch.inputs.shape());
    for _ in 0..cfg.steps {
        let out = engine.forward_backward(params, batch, &delta, cfg.loss)?;
        losses.push(out.loss);
        delta = fgsm_step(&delta, &out.grad_input, cfg.alpha)?;
        delta = project(&delta, &batch.inputs, cfg.epsilon, cfg.clamp_domain)?;
        last_grad = out.grad_input;
    }
    Ok(AttackOutcome {
        state: PerturbationState { delta },
        last_grad,
        losses,
    })
}

/// Sum of absolute input-gradient entries over the whole batch.
pub fn grad_l1(grad_input: &Tensor) -> f64 {
    grad_input.l1_norm()
}

/// `||grad||_1 / (2 eps |x|)`, a lower bound on the local gradient-Lipschitz
/// constant of the loss around a training example of `input_size` entries.
pub fn lipschitz_lower_bound(grad_l1_value: f64, epsilon: f64, input_size: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Range(format!("epsilon must be positive, got {epsilon}")));
    }
    if input_size == 0 {
        return Err(Error::Range("input size must be at least 1".into()));
    }
    Ok(grad_l1_value / (2.0 * epsilon * input_size as f64))
}
