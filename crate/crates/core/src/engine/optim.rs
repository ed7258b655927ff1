use super::model::{GradSet, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Heavy-ball SGD state with coupled L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<(String, Tensor)>,
}

impl OptimState {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;

    pub fn new(params: &ModelParams, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn with_defaults(params: &ModelParams) -> Self {
        Self::new(params, Self::DEFAULT_MOMENTUM, Self::DEFAULT_WEIGHT_DECAY)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// `v <- mu v + (g + wd theta)`, then `theta <- theta - lr v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradSet,
    optim: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::Range(format!("learning rate {lr}")));
    }
    // validate everything before touching any state
    for (name, theta) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Consistency(format!("no gradient for `{name}`")))?;
        g.same_shape(theta)?;
        let v = optim
            .buffer(name)
            .ok_or_else(|| Error::Consistency(format!("no momentum buffer for `{name}`")))?;
        v.same_shape(theta)?;
    }
    let (mu, wd) = (optim.momentum, optim.weight_decay);
    for ((name, theta), (_, v)) in params.iter_mut().zip(optim.buffers.iter_mut()) {
        let g = grads.get(name).expect("checked above");
        for ((t, vv), gg) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv + (gg + wd * *t);
            *t -= lr * *vv;
        }
    }
    Ok(())
}
