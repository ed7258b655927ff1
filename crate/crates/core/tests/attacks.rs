mod common;

use common::net_with_stationary_point;
use deat_core::adversary::{grad_l1, lipschitz_lower_bound, pgd_attack, AttackConfig, InitMode};
use deat_core::engine::{Backward, Batch, Engine, LossKind, MlpEngine, ModelParams, Tensor};
use deat_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss `sum_i a_i (x_i + delta_i - c_i)^2 / 2`, ignoring parameters.
struct Quadratic {
    a: Vec<f64>,
    c: Vec<f64>,
    calls: u64,
}

impl Engine for Quadratic {
    fn forward_backward(&mut self, params: &ModelParams, batch: &Batch, p: &Tensor, _l: LossKind) -> Result<Backward> {
        self.calls += 1;
        let d = self.a.len();
        let mut loss = 0.0;
        let mut g = Vec::with_capacity(batch.inputs.len());
        for (k, (x, dx)) in batch.inputs.data().iter().zip(p.data()).enumerate() {
            let r = x + dx - self.c[k % d];
            loss += 0.5 * self.a[k % d] * r * r;
            g.push(self.a[k % d] * r);
        }
        Ok(Backward {
            loss,
            grad_params: params.zeros_like(),
            grad_input: Tensor::new(batch.inputs.shape().to_vec(), g)?,
            correct: 0,
        })
    }

    fn logits(&self, params: &ModelParams, inputs: &Tensor) -> Result<Tensor> {
        params.logits(inputs)
    }

    fn backprops(&self) -> u64 {
        self.calls
    }
}

fn dummy_params(dim: usize) -> ModelParams {
    ModelParams::mlp(&[dim, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn pgd_reaches_the_far_corner_of_a_quadratic() {
    let x = vec![0.5, 0.2, 0.8, 0.4];
    let c = vec![0.1, 0.9, 0.3, 0.6];
    let mut q = Quadratic { a: vec![1.0, 2.0, 0.5, 3.0], c: c.clone(), calls: 0 };
    let batch = Batch::new(Tensor::new(vec![1, 4], x.clone()).unwrap(), vec![0]).unwrap();
    let cfg = AttackConfig::pgd(0.125, 0.03125, 8);
    let out = pgd_attack(&mut q, &dummy_params(4), &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(q.calls, 8);
    let corner: Vec<f64> = x.iter().zip(&c).map(|(x, c)| 0.125 * (x - c).signum()).collect();
    assert_eq!(out.state.delta.data(), &corner[..]);
    assert!(out.losses.windows(2).all(|w| w[1] >= w[0]), "{:?}", out.losses);
}

#[test]
fn domain_clamp_caps_the_step() {
    let x = vec![0.95, 0.02];
    let c = vec![0.0, 1.0];
    let mut q = Quadratic { a: vec![1.0, 1.0], c, calls: 0 };
    let batch = Batch::new(Tensor::new(vec![1, 2], x).unwrap(), vec![0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clamped = pgd_attack(&mut q, &dummy_params(2), &batch, &AttackConfig::fgsm(0.1), &mut rng).unwrap();
    let d = clamped.state.delta.data();
    assert!((d[0] - 0.05).abs() < 1e-15 && (d[1] + 0.02).abs() < 1e-15, "{d:?}");
    let free = AttackConfig { clamp_domain: false, ..AttackConfig::fgsm(0.1) };
    let out = pgd_attack(&mut q, &dummy_params(2), &batch, &free, &mut rng).unwrap();
    assert_eq!(out.state.delta.data(), &[0.1, -0.1]);
}

#[test]
fn lipschitz_bound_below_quadratic_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=20);
        let c: f64 = rng.gen_range(0.1..10.0);
        let eps: f64 = rng.gen_range(1e-3..1.0);
        // grad of c |x|^2 / 2 is c x; stationary point at 0
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0 * eps..2.0 * eps)).collect();
        let grad = Tensor::new(vec![1, n], x.iter().map(|v| c * v).collect()).unwrap();
        let bound = lipschitz_lower_bound(grad_l1(&grad), eps, n).unwrap();
        assert!(bound <= c * n as f64, "bound {bound} > {}", c * n as f64);
    }
}

fn input_grad(params: &ModelParams, x: &[f64], y: usize) -> Vec<f64> {
    let batch = Batch::new(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap(), vec![y]).unwrap();
    let zero = Tensor::zeros(&[1, x.len()]);
    let mut e = MlpEngine::new();
    e.forward_backward(params, &batch, &zero, LossKind::CrossEntropy).unwrap().grad_input.into_data()
}

#[test]
fn lipschitz_bound_below_empirical_ratio_for_small_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let n = rng.gen_range(2..=6);
        let y = rng.gen_range(0..3);
        let (params, xs) = net_with_stationary_point(n, 8, 3, y, &mut rng);
        assert!(input_grad(&params, &xs, y).iter().all(|g| g.abs() < 1e-14));
        let eps = 0.05;
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> { xs.iter().map(|v| v + rng.gen_range(-eps..eps)).collect() };
        let mut max_ratio: f64 = 0.0;
        let mut bounds = Vec::new();
        for k in 0..1000 {
            let a = sample(&mut rng);
            let b = if k % 2 == 0 { xs.clone() } else { sample(&mut rng) };
            let (ga, gb) = (input_grad(&params, &a, y), input_grad(&params, &b, y));
            let num: f64 = ga.iter().zip(&gb).map(|(p, q)| (p - q).abs()).sum();
            let den = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            if den > 0.0 {
                max_ratio = max_ratio.max(num / den);
            }
            let ga_t = Tensor::new(vec![1, n], ga).unwrap();
            bounds.push(lipschitz_lower_bound(grad_l1(&ga_t), eps, n).unwrap());
        }
        for b in bounds {
            assert!(b <= max_ratio, "bound {b} > ratio {max_ratio}");
        }
    }
}

#[test]
fn uniform_start_pgd_stays_in_ball_and_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = ModelParams::mlp(&[5, 7, 3], &mut rng).unwrap();
    for _ in 0..50 {
        let x: Vec<f64> = (0..10).map(|_| if rng.gen() { rng.gen_range(0.0..0.05) } else { rng.gen_range(0.95..1.0) }).collect();
        let batch = Batch::new(Tensor::new(vec![2, 5], x).unwrap(), vec![0, 2]).unwrap();
        let cfg = AttackConfig { init: InitMode::Uniform, ..AttackConfig::cw(0.2, 0.07, 6) };
        let out = pgd_attack(&mut MlpEngine::new(), &params, &batch, &cfg, &mut rng).unwrap();
        assert!(out.state.delta.max_abs() <= 0.2);
        let adv = batch.inputs.add(&out.state.delta).unwrap();
        assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
