use std::time::Instant;

use rand::seq::SliceRandom;

use super::{DeatCriterion, Dataset, EpochRecord, StrategyConfig, Strategy, TrainOutcome, TrainReport};
use crate::adversary::{self, grad_l1, init_perturbation, AttackConfig, InitMode};
use crate::engine::{sgd_step, Batch, Engine, LossKind, ModelParams, OptimState, Tensor};
use crate::error::{Error, Result};
use crate::scheduler::{self, Criterion, EarlyStopState, EpochSignal, MagnitudeTrace, ReplaySchedule};
use crate::seeds::{SeedStreams, Stream};

/// Trains `init` on `data` with the configured strategy.
pub fn train<E: Engine>(
    engine: &mut E,
    cfg: &StrategyConfig,
    init: ModelParams,
    data: &Dataset,
) -> Result<TrainOutcome> {
    train_with_observer(engine, cfg, init, data, |_| {})
}

/// As [`train`], calling `observer` after each completed epoch.
pub fn train_with_observer<E: Engine, F: FnMut(&EpochRecord)>(
    engine: &mut E,
    cfg: &StrategyConfig,
    init: ModelParams,
    data: &Dataset,
    mut observer: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let batches = data.batches_per_epoch(cfg.batch_size);
    let mut report = TrainReport {
        strategy: cfg.strategy.name(),
        batches_per_epoch: batches,
        epochs: Vec::with_capacity(cfg.epochs),
        stopped_early: false,
        stop_epoch: None,
        summary: None,
    };
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params: init,
            checkpoints: Vec::new(),
            report,
        });
    }
    if batches == 0 {
        return Err(Error::config(
            "strategy.batch_size",
            format!("{} exceeds the {} training examples", cfg.batch_size, data.len()),
        ));
    }
    if init.input_dim()? != data.dim() {
        return Err(Error::Dimension(format!(
            "model takes {} inputs, data has {}",
            init.input_dim()?,
            data.dim()
        )));
    }

    let streams = SeedStreams::new(cfg.seed);
    let mut run = Run {
        engine,
        cfg,
        data,
        optim: OptimState::new(&init, cfg.momentum, cfg.weight_decay),
        params: init,
        data_rng: streams.rng(Stream::Data),
        pert_rng: streams.rng(Stream::Perturbation),
        batches,
        start_backprops: 0,
    };
    run.start_backprops = run.engine.backprops();

    let mut schedule = match cfg.strategy {
        Strategy::Deat { criterion: DeatCriterion::Interval { d } } => {
            Some(ReplaySchedule::new(Criterion::Interval { d }, cfg.gamma, cfg.cap)?)
        }
        Strategy::Deat { criterion: DeatCriterion::Accuracy { frac } } => {
            Some(ReplaySchedule::new(Criterion::Accuracy { frac }, cfg.gamma, cfg.cap)?)
        }
        Strategy::Mdeat => Some(ReplaySchedule::magnitude(cfg.gamma, cfg.cap)?),
        Strategy::Mpgd { max_steps } => {
            let cap = cfg.cap.map_or(max_steps, |c| c.min(max_steps));
            Some(ReplaySchedule::magnitude(cfg.gamma, Some(cap))?)
        }
        _ => None,
    };
    let mut early_stop = match cfg.strategy {
        Strategy::Mufgsm { window, gamma } => Some(EarlyStopState::new(window, gamma)?),
        _ => None,
    };
    let mut trace = MagnitudeTrace::new();
    // FREE keeps one perturbation alive across every batch and epoch.
    let mut free_delta = Tensor::zeros(&[cfg.batch_size, data.dim()]);
    let mut checkpoints = Vec::new();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        run.engine.begin_epoch(epoch);
        let order = run.epoch_order();
        let lr_at_start = run.lr(epoch, 0)?;
        let mut stats = EpochStats::default();
        let r = schedule.as_ref().map_or(1, |s| s.r);

        for (i, idx) in order.chunks_exact(cfg.batch_size).enumerate() {
            let batch = data.batch(idx)?;
            let lr = run.lr(epoch, i)?;
            match cfg.strategy {
                Strategy::Standard => run.natural_step(&batch, lr, &mut stats)?,
                Strategy::PgdAt { steps } => {
                    let attack = AttackConfig { steps, ..cfg.attack.clone() };
                    run.pgd_step(&batch, &attack, lr, &mut stats)?
                }
                Strategy::Free { replays } => {
                    run.replay_step(&batch, &mut free_delta, replays, cfg.attack.epsilon, lr, &mut stats)?
                }
                Strategy::Ufgsm | Strategy::Mufgsm { .. } => run.ufgsm_step(&batch, lr, &mut stats)?,
                Strategy::Deat { .. } | Strategy::Mdeat => {
                    let mut delta = run.fresh_delta(batch.inputs.shape())?;
                    run.replay_step(&batch, &mut delta, r, cfg.attack.alpha, lr, &mut stats)?
                }
                Strategy::Mpgd { max_steps } => {
                    let steps = r.min(max_steps);
                    let attack = AttackConfig {
                        steps,
                        alpha: scheduler::adjust_step_size(steps, cfg.attack.epsilon, cfg.attack.alpha),
                        ..cfg.attack.clone()
                    };
                    run.pgd_step(&batch, &attack, lr, &mut stats)?
                }
            }
        }

        let train_acc = stats.correct as f64 / stats.seen.max(1) as f64;
        let r_used = match cfg.strategy {
            Strategy::PgdAt { steps } => steps,
            Strategy::Free { replays } => replays,
            Strategy::Mpgd { max_steps } => r.min(max_steps),
            _ => r,
        };
        if let Some(s) = schedule.as_mut() {
            *s = s.end_epoch(epoch, EpochSignal { train_acc, l_x: stats.l_x })?;
        }
        trace.push(stats.l_x);

        let record = EpochRecord {
            epoch,
            r: r_used,
            l_x: stats.l_x,
            threshold: schedule.as_ref().and_then(|s| s.threshold),
            lr: lr_at_start,
            train_acc,
            backprops_cumulative: run.engine.backprops() - run.start_backprops,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        observer(&record);
        report.epochs.push(record);
        if epoch % cfg.checkpoint_stride == 0 || epoch == cfg.epochs {
            checkpoints.push((epoch, run.params.clone()));
        }

        if let Some(stop) = early_stop.as_mut() {
            if stop.observe(&trace)? {
                report.stopped_early = true;
                report.stop_epoch = Some(epoch);
                if checkpoints.last().map(|(e, _)| *e) != Some(epoch) {
                    checkpoints.push((epoch, run.params.clone()));
                }
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: run.params,
        checkpoints,
        report,
    })
}

#[derive(Default)]
struct EpochStats {
    l_x: f64,
    correct: usize,
    seen: usize,
}

struct Run<'a, E: Engine> {
    engine: &'a mut E,
    cfg: &'a StrategyConfig,
    data: &'a Dataset,
    params: ModelParams,
    optim: OptimState,
    data_rng: rand_chacha::ChaCha8Rng,
    pert_rng: rand_chacha::ChaCha8Rng,
    batches: usize,
    start_backprops: u64,
}

impl<E: Engine> Run<'_, E> {
    fn epoch_order(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.data_rng);
        order
    }

    /// Rate for minibatch `i` (0-based) of 1-based `epoch`.
    fn lr(&self, epoch: usize, i: usize) -> Result<f64> {
        let total = (self.cfg.epochs * self.batches) as f64;
        let progress = ((epoch - 1) * self.batches + i) as f64 / total;
        self.cfg.lr.rate(epoch - 1, progress)
    }

    fn fresh_delta(&mut self, shape: &[usize]) -> Result<Tensor> {
        let a = &self.cfg.attack;
        let delta = match a.init {
            InitMode::Zero => Tensor::zeros(shape),
            InitMode::Uniform => init_perturbation(shape, InitMode::Uniform, a.epsilon, &mut self.pert_rng)?.delta,
        };
        Ok(delta)
    }

    fn update(&mut self, grads: &ModelParams, lr: f64) -> Result<()> {
        sgd_step(&mut self.params, grads, &mut self.optim, lr)
    }

    fn natural_step(&mut self, batch: &Batch, lr: f64, stats: &mut EpochStats) -> Result<()> {
        let zero = Tensor::zeros(batch.inputs.shape());
        let out = self.engine.forward_backward(&self.params, batch, &zero, LossKind::CrossEntropy)?;
        self.update(&out.grad_params, lr)?;
        stats.l_x += grad_l1(&out.grad_input);
        stats.correct += out.correct;
        stats.seen += batch.len();
        Ok(())
    }

    /// Attack with `attack.steps` iterations, then one parameter update.
    fn pgd_step(&mut self, batch: &Batch, attack: &AttackConfig, lr: f64, stats: &mut EpochStats) -> Result<()> {
        let outcome = adversary::pgd_attack(self.engine, &self.params, batch, attack, &mut self.pert_rng)?;
        let out = self.engine.forward_backward(
            &self.params,
            batch,
            &outcome.state.delta,
            LossKind::CrossEntropy,
        )?;
        self.update(&out.grad_params, lr)?;
        stats.l_x += grad_l1(&outcome.last_grad);
        stats.correct += out.correct;
        stats.seen += batch.len();
        Ok(())
    }

    /// `replays` rounds of simultaneous gradients, update, signed step and projection.
    fn replay_step(
        &mut self,
        batch: &Batch,
        delta: &mut Tensor,
        replays: usize,
        step: f64,
        lr: f64,
        stats: &mut EpochStats,
    ) -> Result<()> {
        let a = &self.cfg.attack;
        let (epsilon, clamp) = (a.epsilon, a.clamp_domain);
        let mut last = None;
        for _ in 0..replays {
            let out = self.engine.forward_backward(&self.params, batch, delta, LossKind::CrossEntropy)?;
            self.update(&out.grad_params, lr)?;
            let stepped = adversary::fgsm_step(delta, &out.grad_input, step)?;
            *delta = adversary::project(&stepped, &batch.inputs, epsilon, clamp)?;
            last = Some(out);
        }
        let out = last.expect("replays >= 1");
        stats.l_x += grad_l1(&out.grad_input);
        stats.correct += out.correct;
        stats.seen += batch.len();
        Ok(())
    }

    /// Uniform start, one signed step, then one update on the result.
    fn ufgsm_step(&mut self, batch: &Batch, lr: f64, stats: &mut EpochStats) -> Result<()> {
        let a = self.cfg.attack.clone();
        let shape = batch.inputs.shape().to_vec();
        let start = init_perturbation(&shape, InitMode::Uniform, a.epsilon, &mut self.pert_rng)?.delta;
        let start = if a.clamp_domain {
            adversary::project(&start, &batch.inputs, a.epsilon, true)?
        } else {
            start
        };
        let probe = self.engine.forward_backward(&self.params, batch, &start, LossKind::CrossEntropy)?;
        let stepped = adversary::fgsm_step(&start, &probe.grad_input, a.alpha)?;
        let delta = adversary::project(&stepped, &batch.inputs, a.epsilon, a.clamp_domain)?;
        let out = self.engine.forward_backward(&self.params, batch, &delta, LossKind::CrossEntropy)?;
        self.update(&out.grad_params, lr)?;
        stats.l_x += grad_l1(&probe.grad_input);
        stats.correct += out.correct;
        stats.seen += batch.len();
        Ok(())
    }
}
