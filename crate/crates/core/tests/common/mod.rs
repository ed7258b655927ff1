#![allow(dead_code)]

use deat_core::adversary::AttackConfig;
use deat_core::engine::{Backward, Batch, Engine, LossKind, MlpEngine, ModelParams, Tensor};
use deat_core::trainer::{default_training_attack, Dataset, Strategy, StrategyConfig};
use deat_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Engine whose input gradient has l1 norm `script[epoch - 1] / batches`
/// on every call, with zero parameter gradients.
pub struct ScriptedEngine {
    pub script: Vec<f64>,
    pub batches: usize,
    epoch: usize,
    calls: u64,
}

impl ScriptedEngine {
    pub fn new(script: Vec<f64>, batches: usize) -> Self {
        Self { script, batches, epoch: 0, calls: 0 }
    }
}

impl Engine for ScriptedEngine {
    fn forward_backward(&mut self, params: &ModelParams, batch: &Batch, _p: &Tensor, _l: LossKind) -> Result<Backward> {
        self.calls += 1;
        let target = self.script[self.epoch - 1] / self.batches as f64;
        let n = batch.inputs.len();
        let grad_input = Tensor::full(batch.inputs.shape(), target / n as f64);
        Ok(Backward {
            loss: 0.0,
            grad_params: params.zeros_like(),
            grad_input,
            correct: 0,
        })
    }

    fn logits(&self, params: &ModelParams, inputs: &Tensor) -> Result<Tensor> {
        params.logits(inputs)
    }

    fn backprops(&self) -> u64 {
        self.calls
    }

    fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }
}

/// `MlpEngine` that records the largest `|delta|` it was ever handed and
/// whether any `x + delta` left `[0, 1]`.
#[derive(Default)]
pub struct CheckedEngine {
    pub inner: MlpEngine,
    pub max_abs_delta: f64,
    pub left_domain: bool,
}

impl Engine for CheckedEngine {
    fn forward_backward(&mut self, params: &ModelParams, batch: &Batch, p: &Tensor, loss: LossKind) -> Result<Backward> {
        self.max_abs_delta = self.max_abs_delta.max(p.max_abs());
        let outside = batch
            .inputs
            .data()
            .iter()
            .zip(p.data())
            .any(|(x, d)| !(0.0..=1.0).contains(&(x + d)));
        self.left_domain |= outside;
        self.inner.forward_backward(params, batch, p, loss)
    }

    fn logits(&self, params: &ModelParams, inputs: &Tensor) -> Result<Tensor> {
        self.inner.logits(params, inputs)
    }

    fn backprops(&self) -> u64 {
        self.inner.backprops()
    }
}

/// Two Gaussian blobs in `[0, 1]^dim`, separated along every coordinate.
pub fn blobs(n: usize, dim: usize, sep: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let s = if y == 0 { -1.0 } else { 1.0 };
        for _ in 0..dim {
            let v: f64 = 0.5 + s * sep / 2.0 + rng.gen_range(-0.05..0.05);
            data.push(v.clamp(0.0, 1.0));
        }
        labels.push(y);
    }
    Dataset::new(Tensor::new(vec![n, dim], data).unwrap(), labels, 2).unwrap()
}

pub fn mlp(sizes: &[usize], seed: u64) -> ModelParams {
    ModelParams::mlp(sizes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn config(strategy: Strategy, epochs: usize, batch_size: usize, epsilon: f64) -> StrategyConfig {
    let attack: AttackConfig = default_training_attack(&strategy, epsilon);
    let mut cfg = StrategyConfig::new(strategy, epochs, attack);
    cfg.batch_size = batch_size;
    cfg
}

/// Every strategy with small parameters.
pub fn all_strategies() -> Vec<Strategy> {
    use deat_core::trainer::DeatCriterion;
    vec![
        Strategy::Standard,
        Strategy::PgdAt { steps: 3 },
        Strategy::Free { replays: 2 },
        Strategy::Ufgsm,
        Strategy::Deat { criterion: DeatCriterion::Interval { d: 2 } },
        Strategy::Deat { criterion: DeatCriterion::Accuracy { frac: 0.4 } },
        Strategy::Mdeat,
        Strategy::Mpgd { max_steps: 3 },
        Strategy::Mufgsm { window: 2, gamma: 1.5 },
    ]
}

/// One-hidden-layer net whose cross-entropy loss for class `y` has an exact
/// stationary point at the returned input: output weights are projected so
/// `W (p - e_y) = 0` and output biases tie every logit there.
pub fn net_with_stationary_point<R: Rng>(n: usize, hidden: usize, classes: usize, y: usize, rng: &mut R) -> (ModelParams, Vec<f64>) {
    let mut params = ModelParams::mlp(&[n, hidden, classes], rng).unwrap();
    let x_star: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.8)).collect();
    let w0 = params.get("dense0.weight").unwrap().data().to_vec();
    let h: Vec<f64> = (0..hidden)
        .map(|j| (0..n).map(|i| x_star[i] * w0[i * hidden + j]).sum::<f64>().max(0.0))
        .collect();
    let v: Vec<f64> = (0..classes).map(|k| 1.0 / classes as f64 - f64::from(k == y)).collect();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    let mut w1 = params.get("dense1.weight").unwrap().data().to_vec();
    for j in 0..hidden {
        let wv: f64 = (0..classes).map(|k| w1[j * classes + k] * v[k]).sum();
        for k in 0..classes {
            w1[j * classes + k] -= wv * v[k] / vv;
        }
    }
    let b1: Vec<f64> = (0..classes).map(|k| -(0..hidden).map(|j| h[j] * w1[j * classes + k]).sum::<f64>()).collect();
    for (name, t) in params.iter_mut() {
        match name {
            "dense1.weight" => t.data_mut().copy_from_slice(&w1),
            "dense1.bias" => t.data_mut().copy_from_slice(&b1),
            _ => {}
        }
    }
    (params, x_star)
}
