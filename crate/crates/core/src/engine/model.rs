//! Feed-forward ReLU classifiers and their named parameter sets.

use rand::Rng;

use super::autodiff::{Tape, Var};
use super::loss::LossKind;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered, uniquely named parameter tensors.
///
/// Dense layer `k` is stored as `dense{k}.weight` (`[in, out]`) followed by
/// `dense{k}.bias` (`[out]`). The same container carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
}

/// Gradients share the parameter layout.
pub type GradSet = ModelParams;

impl ModelParams {
    pub fn from_named(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Consistency(format!("duplicate parameter `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    /// Glorot-uniform weights, zero biases.
    ///
    /// `layer_sizes` lists the input width, each hidden width and the class
    /// count, e.g. `[16, 32, 2]`.
    pub fn mlp<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidTask(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if let Some(pos) = layer_sizes.iter().position(|&w| w == 0) {
            return Err(Error::InvalidTask(format!("layer {pos} has zero width")));
        }
        let mut entries = Vec::with_capacity(2 * (layer_sizes.len() - 1));
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            entries.push((format!("dense{k}.weight"), Tensor::new(vec![fan_in, fan_out], w)?));
            entries.push((format!("dense{k}.bias"), Tensor::zeros(&[fan_out])));
        }
        Ok(Self { entries })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattened copy of every scalar, in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Overwrites every scalar from a flat buffer produced by [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Input width, hidden widths and class count of the dense chain.
    pub fn layer_sizes(&self) -> Result<Vec<usize>> {
        let layers = self.dense_layers()?;
        let mut sizes = vec![layers[0].0.shape()[0]];
        sizes.extend(layers.iter().map(|(w, _)| w.shape()[1]));
        Ok(sizes)
    }

    pub fn input_dim(&self) -> Result<usize> {
        Ok(self.layer_sizes()?[0])
    }

    pub fn n_classes(&self) -> Result<usize> {
        Ok(*self.layer_sizes()?.last().expect("non-empty"))
    }

    fn dense_layers(&self) -> Result<Vec<(&Tensor, &Tensor)>> {
        if self.entries.is_empty() || !self.entries.len().is_multiple_of(2) {
            return Err(Error::Consistency(
                "parameters do not form weight/bias pairs".into(),
            ));
        }
        let mut layers = Vec::with_capacity(self.entries.len() / 2);
        let mut prev_out = None;
        for (k, pair) in self.entries.chunks(2).enumerate() {
            let (wn, w) = (&pair[0].0, &pair[0].1);
            let (bn, b) = (&pair[1].0, &pair[1].1);
            if *wn != format!("dense{k}.weight") || *bn != format!("dense{k}.bias") {
                return Err(Error::Consistency(format!(
                    "unexpected parameter names `{wn}`, `{bn}` for layer {k}"
                )));
            }
            let (fan_in, fan_out) = w.dims2()?;
            if b.shape() != [fan_out] {
                return Err(Error::Dimension(format!("{bn} has shape {:?}", b.shape())));
            }
            if let Some(p) = prev_out {
                if p != fan_in {
                    return Err(Error::Dimension(format!(
                        "layer {k} expects {fan_in} inputs, previous layer yields {p}"
                    )));
                }
            }
            prev_out = Some(fan_out);
            layers.push((w, b));
        }
        Ok(layers)
    }

    /// Logits for a `[B, n]` input matrix.
    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        let layers = self.dense_layers()?;
        let last = layers.len() - 1;
        let mut h = inputs.clone();
        for (k, (w, b)) in layers.into_iter().enumerate() {
            h = h.matmul(w)?;
            let cols = b.len();
            for row in h.data_mut().chunks_mut(cols) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            if k != last {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }
}

/// Labeled examples, inputs as `[B, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (b, _) = inputs.dims2()?;
        if b == 0 {
            return Err(Error::Dimension("batch must hold at least one example".into()));
        }
        if b != labels.len() {
            return Err(Error::Dimension(format!(
                "{b} inputs but {} labels",
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_dim(&self) -> usize {
        self.inputs.shape()[1]
    }
}

/// Result of one combined backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub loss: f64,
    pub grad_params: GradSet,
    /// Gradient with respect to the perturbed input `x + delta`.
    pub grad_input: Tensor,
    /// Examples whose perturbed input was classified correctly.
    pub correct: usize,
}

/// Anything that can produce simultaneous parameter and input gradients.
///
/// Training strategies and attacks only talk to this trait, which lets
/// tests substitute scripted engines.
pub trait Engine {
    /// One backpropagation through the loss at `batch.inputs + perturbation`.
    fn forward_backward(
        &mut self,
        params: &ModelParams,
        batch: &Batch,
        perturbation: &Tensor,
        loss: LossKind,
    ) -> Result<Backward>;

    /// Forward pass only; never counted.
    fn logits(&self, params: &ModelParams, inputs: &Tensor) -> Result<Tensor>;

    /// Number of `forward_backward` calls so far.
    fn backprops(&self) -> u64;

    /// Notification that a training epoch (1-based) is starting.
    fn begin_epoch(&mut self, _epoch: usize) {}
}

/// Reverse-mode engine for dense ReLU networks.
#[derive(Debug, Default, Clone)]
pub struct MlpEngine {
    backprops: u64,
}

impl MlpEngine {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Engine for MlpEngine {
    fn forward_backward(
        &mut self,
        params: &ModelParams,
        batch: &Batch,
        perturbation: &Tensor,
        loss: LossKind,
    ) -> Result<Backward> {
        self.backprops += 1;
        forward_backward(params, batch, perturbation, loss)
    }

    fn logits(&self, params: &ModelParams, inputs: &Tensor) -> Result<Tensor> {
        params.logits(inputs)
    }

    fn backprops(&self) -> u64 {
        self.backprops
    }
}

/// Mean loss, parameter gradients and input gradient in one reverse sweep.
pub fn forward_backward(
    params: &ModelParams,
    batch: &Batch,
    perturbation: &Tensor,
    loss: LossKind,
) -> Result<Backward> {
    batch.inputs.same_shape(perturbation)?;
    let sizes = params.layer_sizes()?;
    if batch.example_dim() != sizes[0] {
        return Err(Error::Dimension(format!(
            "model expects {} inputs per example, batch has {}",
            sizes[0],
            batch.example_dim()
        )));
    }

    let mut tape = Tape::new();
    let x = tape.leaf(batch.inputs.add(perturbation)?);
    let param_vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let n_layers = param_vars.len() / 2;
    let mut h = x;
    for k in 0..n_layers {
        h = tape.matmul(h, param_vars[2 * k])?;
        h = tape.add_bias(h, param_vars[2 * k + 1])?;
        if !tape.value(h).all_finite() {
            return Err(Error::Numeric {
                layer: format!("dense{k}"),
            });
        }
        if k + 1 != n_layers {
            h = tape.relu(h);
        }
    }
    let logits = h;
    let root = tape.loss(logits, &batch.labels, loss)?;
    let value = tape.value(root).item();
    if !value.is_finite() {
        return Err(Error::Numeric {
            layer: "loss".into(),
        });
    }
    let correct = super::loss::count_correct(tape.value(logits), &batch.labels);

    let mut grads = tape.backward(root)?;
    let grad_input = grads
        .take(x)
        .unwrap_or_else(|| Tensor::zeros(batch.inputs.shape()));
    let mut entries = Vec::with_capacity(param_vars.len());
    for ((name, t), v) in params.iter().zip(&param_vars) {
        let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape()));
        entries.push((name.to_string(), g));
    }
    Ok(Backward {
        loss: value,
        grad_params: ModelParams { entries },
        grad_input,
        correct,
    })
}
