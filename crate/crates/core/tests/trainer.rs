mod common;

use common::*;
use deat_core::adversary::{AttackConfig, InitMode};
use deat_core::engine::{MlpEngine, ModelParams, Tensor};
use deat_core::seeds::{SeedStreams, Stream};
use deat_core::trainer::{
    evaluate, select_best_checkpoint, train, Dataset, DeatCriterion, Strategy, TrainOutcome,
};

fn run(strategy: Strategy, epochs: usize, data: &Dataset, batch: usize, seed: u64) -> TrainOutcome {
    let mut cfg = config(strategy, epochs, batch, 0.1);
    cfg.seed = seed;
    let init = mlp(&[data.dim(), 6, 2], seed);
    train(&mut MlpEngine::new(), &cfg, init, data).unwrap()
}

#[test]
fn measured_cost_matches_closed_form() {
    for m in [1usize, 3] {
        let data = blobs(8 * m, 4, 0.3, 1);
        for t in 1..=6 {
            for s in all_strategies() {
                let out = run(s, t, &data, 8, 2);
                let rep = &out.report;
                assert_eq!(rep.batches_per_epoch, m);
                let cum: Vec<u64> = rep.epochs.iter().map(|e| e.backprops_cumulative).collect();
                assert!(cum.windows(2).all(|w| w[0] < w[1]), "{s:?}: {cum:?}");
                let (mm, epochs_run) = (m as u64, rep.epochs.len() as u64);
                let per_epoch: u64 = match s {
                    Strategy::Mpgd { max_steps } => rep.epochs.iter().map(|e| e.r.min(max_steps) as u64 + 1).sum(),
                    Strategy::Mufgsm { .. } => 2 * epochs_run,
                    _ => rep.epochs.iter().map(|e| e.r as u64).sum(),
                };
                match s.predicted_backprops(t, m) {
                    Some(p) => assert_eq!(rep.total_backprops(), p, "{s:?} T={t} M={m}"),
                    None => assert_eq!(rep.total_backprops(), mm * per_epoch, "{s:?} T={t} M={m}"),
                }
                if matches!(s, Strategy::PgdAt { .. } | Strategy::Free { .. } | Strategy::Ufgsm | Strategy::Standard) {
                    let per: u64 = match s {
                        Strategy::PgdAt { steps } => steps as u64 + 1,
                        Strategy::Free { replays } => replays as u64,
                        Strategy::Ufgsm => 2,
                        _ => 1,
                    };
                    assert_eq!(rep.total_backprops(), per * mm * t as u64);
                }
            }
        }
    }
}

#[test]
fn deat_interval_costs() {
    let data = blobs(16, 4, 0.3, 1);
    let deat = |d| Strategy::Deat { criterion: DeatCriterion::Interval { d } };
    assert_eq!(run(deat(3), 10, &data, 8, 0).report.total_backprops(), 22 * 2);
    assert_eq!(run(deat(2), 8, &data, 8, 0).report.total_backprops(), 20 * 2);
    let r: Vec<usize> = run(deat(3), 10, &data, 8, 0).report.epochs.iter().map(|e| e.r).collect();
    assert_eq!(r, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
}

#[test]
fn free_single_replay_first_batch_is_natural() {
    let data = blobs(8, 4, 0.3, 3);
    let a = run(Strategy::Standard, 1, &data, 8, 5);
    let b = run(Strategy::Free { replays: 1 }, 1, &data, 8, 5);
    assert_eq!(a.params, b.params);
    assert_eq!(a.report.epochs[0].l_x, b.report.epochs[0].l_x);
}

#[test]
fn replay_methods_train_naturally_in_epoch_one() {
    let data = blobs(40, 4, 0.3, 3);
    let reference = run(Strategy::Standard, 1, &data, 8, 5);
    for s in [
        Strategy::Deat { criterion: DeatCriterion::Interval { d: 3 } },
        Strategy::Deat { criterion: DeatCriterion::Accuracy { frac: 0.4 } },
        Strategy::Mdeat,
    ] {
        let out = run(s, 1, &data, 8, 5);
        assert_eq!(out.params, reference.params, "{s:?}");
        assert_eq!(out.report.epochs[0].train_acc, reference.report.epochs[0].train_acc);
    }
}

fn scripted(strategy: Strategy, script: Vec<f64>, gamma: f64, cap: Option<usize>) -> TrainOutcome {
    let m = 4;
    let data = blobs(2 * m, 2, 0.3, 0);
    let mut cfg = config(strategy, script.len(), 2, 0.1);
    cfg.gamma = gamma;
    cfg.cap = cap;
    let mut engine = ScriptedEngine::new(script, m);
    train(&mut engine, &cfg, mlp(&[2, 2, 2], 0), &data).unwrap()
}

#[test]
fn scripted_magnitudes_are_recorded_exactly() {
    let script = vec![16.0, 48.0, 40.0, 64.0, 12.5];
    for s in all_strategies() {
        let out = scripted(s, script.clone(), 1.0, None);
        let got = out.report.l_x_trace();
        assert_eq!(got, script[..got.len()].to_vec(), "{s:?}");
    }
}

#[test]
fn mdeat_constant_magnitude_keeps_two_replays() {
    let out = scripted(Strategy::Mdeat, vec![32.0; 8], 1.0, None);
    let r: Vec<usize> = out.report.epochs.iter().map(|e| e.r).collect();
    assert_eq!(r, vec![1, 2, 2, 2, 2, 2, 2, 2]);
    let thr: Vec<Option<f64>> = out.report.epochs.iter().map(|e| e.threshold).collect();
    assert_eq!(thr[0], None);
    assert!(thr[1..].iter().all(|&t| t == Some(32.0)));
}

#[test]
fn mdeat_increasing_magnitude_adds_a_replay_each_epoch() {
    let script: Vec<f64> = (1..=8).map(|t| 16.0 * t as f64).collect();
    let out = scripted(Strategy::Mdeat, script.clone(), 1.0, None);
    // replays in force during each epoch
    let r: Vec<usize> = out.report.epochs.iter().map(|e| e.r).collect();
    assert_eq!(r, vec![1, 2, 2, 3, 4, 5, 6, 7]);
    let out = scripted(Strategy::Mdeat, script, 1.0, Some(4));
    let r: Vec<usize> = out.report.epochs.iter().map(|e| e.r).collect();
    assert_eq!(r, vec![1, 2, 2, 3, 4, 4, 4, 4]);
    assert_eq!(out.report.total_backprops(), 4 * r.iter().sum::<usize>() as u64);
}

#[test]
fn mdeat_thresholds_track_the_triggering_magnitude() {
    let data = blobs(64, 4, 0.3, 9);
    let mut cfg = config(Strategy::Mdeat, 8, 16, 0.1);
    cfg.gamma = 1.01;
    let out = train(&mut MlpEngine::new(), &cfg, mlp(&[4, 6, 2], 1), &data).unwrap();
    let eps = &out.report.epochs;
    for (i, e) in eps.iter().enumerate().skip(1) {
        let thr = e.threshold.unwrap();
        let setter = eps[1..=i].iter().rev().find(|s| 1.01 * s.l_x == thr);
        assert!(setter.is_some(), "epoch {}: threshold {thr} not 1.01 x any l_X", e.epoch);
    }
}

#[test]
fn mpgd_saturates_at_its_step_budget() {
    let script: Vec<f64> = (1..=7).map(|t| 16.0 * t as f64).collect();
    let out = scripted(Strategy::Mpgd { max_steps: 3 }, script, 1.0, None);
    let r: Vec<usize> = out.report.epochs.iter().map(|e| e.r).collect();
    assert_eq!(r, vec![1, 2, 2, 3, 3, 3, 3]);
    let per_batch: u64 = r.iter().map(|&r| r as u64 + 1).sum();
    assert_eq!(out.report.total_backprops(), 4 * per_batch);
}

#[test]
fn mufgsm_stops_at_the_spike() {
    let s = Strategy::Mufgsm { window: 2, gamma: 1.5 };
    let out = scripted(s, vec![10.0, 9.0, 8.0, 8.0, 8.0, 30.0, 31.0, 32.0, 33.0, 34.0], 1.0, None);
    assert!(out.report.stopped_early);
    assert_eq!(out.report.stop_epoch, Some(6));
    assert_eq!(out.report.epochs.len(), 6);
    assert_eq!(out.report.total_backprops(), 2 * 4 * 6);
    assert_eq!(out.checkpoints.last().unwrap().0, 6);

    let decay: Vec<f64> = (0..10).map(|t| 100.0 / (1 << t) as f64).collect();
    let out = scripted(s, decay, 1.0, None);
    assert!(!out.report.stopped_early);
    assert_eq!(out.report.stop_epoch, None);
    assert_eq!(out.report.epochs.len(), 10);
}

#[test]
fn accuracy_criterion_never_fires_below_threshold() {
    // the scripted engine reports zero correct predictions
    let s = Strategy::Deat { criterion: DeatCriterion::Accuracy { frac: 0.4 } };
    let out = scripted(s, vec![16.0; 6], 1.0, None);
    assert!(out.report.epochs.iter().all(|e| e.r == 1 && e.train_acc == 0.0));
    assert_eq!(out.report.total_backprops(), 4 * 6);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let data = blobs(48, 4, 0.3, 2);
    for s in all_strategies() {
        let a = run(s, 4, &data, 16, 11);
        let b = run(s, 4, &data, 16, 11);
        assert_eq!(a.params, b.params, "{s:?}");
        assert_eq!(a.report.without_timing(), b.report.without_timing(), "{s:?}");
        let la: Vec<u64> = a.report.l_x_trace().iter().map(|v| v.to_bits()).collect();
        let lb: Vec<u64> = b.report.l_x_trace().iter().map(|v| v.to_bits()).collect();
        assert_eq!(la, lb);
    }
}

#[test]
fn every_update_sees_a_perturbation_inside_the_ball() {
    let data = blobs(48, 4, 0.8, 4);
    for clamp in [false, true] {
        for s in all_strategies() {
            let mut cfg = config(s, 4, 16, 0.1);
            cfg.attack.clamp_domain = clamp;
            let mut engine = CheckedEngine::default();
            train(&mut engine, &cfg, mlp(&[4, 6, 2], 3), &data).unwrap();
            assert!(engine.max_abs_delta <= 0.1, "{s:?}: {}", engine.max_abs_delta);
            // FREE carries its perturbation to new inputs, so only the ball holds
            if clamp && !matches!(s, Strategy::Free { .. }) {
                assert!(!engine.left_domain, "{s:?}");
            }
        }
    }
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let data = blobs(16, 4, 0.3, 0);
    let init = mlp(&[4, 6, 2], 7);
    let cfg = config(Strategy::PgdAt { steps: 7 }, 0, 8, 0.1);
    let out = train(&mut MlpEngine::new(), &cfg, init.clone(), &data).unwrap();
    assert_eq!(out.params, init);
    assert!(out.report.epochs.is_empty());
    assert!(out.checkpoints.is_empty());
    assert_eq!(out.report.total_backprops(), 0);
}

#[test]
fn standard_training_fits_separable_data() {
    let data = blobs(400, 4, 0.5, 8);
    let out = run(Strategy::Standard, 10, &data, 20, 0);
    assert!(out.report.epochs.last().unwrap().train_acc >= 0.99);
}

#[test]
fn oversized_batch_is_a_config_error() {
    let data = blobs(8, 4, 0.3, 0);
    let cfg = config(Strategy::Standard, 1, 16, 0.1);
    let err = train(&mut MlpEngine::new(), &cfg, mlp(&[4, 2], 0), &data).err().unwrap();
    assert!(matches!(err, deat_core::Error::Config { .. }), "{err}");
}

/// Zero weights with output bias favouring `class`.
fn constant_classifier(dim: usize, class: usize) -> ModelParams {
    let mut p = mlp(&[dim, 2], 0);
    for (name, t) in p.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = if name.ends_with("bias") && i == class { 1.0 } else { 0.0 };
        }
    }
    p
}

fn skewed(n0: usize, n1: usize) -> Dataset {
    let labels: Vec<usize> = std::iter::repeat_n(0, n0).chain(std::iter::repeat_n(1, n1)).collect();
    let n = labels.len();
    let inputs = Tensor::new(vec![n, 3], (0..3 * n).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
    Dataset::new(inputs, labels, 2).unwrap()
}

#[test]
fn constant_classifier_is_attack_invariant() {
    let data = skewed(30, 10);
    let p = constant_classifier(3, 0);
    let mut rng = SeedStreams::new(0).rng(Stream::Evaluation);
    let mut e = MlpEngine::new();
    assert_eq!(evaluate(&mut e, &p, &data, None, &mut rng).unwrap(), 0.75);
    for cfg in [
        AttackConfig::fgsm(0.3),
        AttackConfig::pgd(0.3, 0.05, 10),
        AttackConfig::cw(0.3, 0.05, 10),
        AttackConfig { init: InitMode::Uniform, ..AttackConfig::pgd(0.3, 0.05, 5) },
    ] {
        assert_eq!(evaluate(&mut e, &p, &data, Some(&cfg), &mut rng).unwrap(), data.majority_fraction());
    }
}

#[test]
fn zero_radius_and_fgsm_reductions() {
    let data = blobs(300, 4, 0.2, 6);
    let p = run(Strategy::Standard, 3, &data, 20, 1).params;
    let mut rng = SeedStreams::new(0).rng(Stream::Evaluation);
    let mut e = MlpEngine::new();
    let natural = evaluate(&mut e, &p, &data, None, &mut rng).unwrap();
    let zero = AttackConfig::pgd(0.0, 0.01, 20);
    assert_eq!(evaluate(&mut e, &p, &data, Some(&zero), &mut rng).unwrap(), natural);

    let fgsm = evaluate(&mut e, &p, &data, Some(&AttackConfig::fgsm(0.15)), &mut rng).unwrap();
    let one_step = AttackConfig {
        init: InitMode::Zero,
        ..AttackConfig::pgd(0.15, 0.15, 1)
    };
    assert_eq!(evaluate(&mut e, &p, &data, Some(&one_step), &mut rng).unwrap(), fgsm);
    assert!(fgsm < natural);
}

#[test]
fn empty_evaluation_set_is_rejected() {
    let empty = Dataset::new(Tensor::zeros(&[0, 3]), vec![], 2).unwrap();
    let mut rng = SeedStreams::new(0).rng(Stream::Evaluation);
    assert!(evaluate(&mut MlpEngine::new(), &constant_classifier(3, 0), &empty, None, &mut rng).is_err());
}

#[test]
fn best_checkpoint_selection() {
    let data = skewed(30, 10);
    let (bad, mid) = (constant_classifier(3, 1), constant_classifier(3, 0));
    let attack = AttackConfig::pgd(0.1, 0.025, 5);
    let mut rng = SeedStreams::new(0).rng(Stream::Evaluation);
    let mut e = MlpEngine::new();
    let mut pick = |cps: &[ModelParams]| select_best_checkpoint(&mut e, cps, &data, &attack, &mut rng);

    let (i, scores) = pick(&[bad.clone(), mid.clone()]).unwrap();
    assert_eq!((i, scores), (1, vec![0.25, 0.75]));
    // robustness collapses after the second checkpoint
    assert_eq!(pick(&[bad.clone(), mid.clone(), bad.clone(), bad.clone()]).unwrap().0, 1);
    assert_eq!(pick(&[mid.clone(), mid.clone()]).unwrap().0, 0);
    assert_eq!(pick(std::slice::from_ref(&bad)).unwrap().0, 0);
    assert!(pick(&[]).is_err());
}
