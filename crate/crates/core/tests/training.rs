mod common;

use ndarray::{Array2, ArrayD, IxDyn};
use proptest::prelude::*;

use crossbrain::eeg_io::{generate_synthetic, SyntheticSpec};
use crossbrain::finetune::{finetune, FinetuneOptions, Splits, TaskKind, TaskSpec};
use crossbrain::model::{Checkpoint, Encoder, ModelConfig, ParameterSet};
use crossbrain::training::{clip_grad_norm, masked_grid, pretrain, reconstruction_loss, AdamW, PretrainConfig, ScheduleConfig, TrainState};

use common::*;

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg = ModelConfig::tiny();
    let mut params = ParameterSet::init(&cfg, 1).unwrap();
    let before = params.clone();
    let mut grads = params.zeros_like();
    let mut r = rng(50);
    for (_, g) in grads.iter_mut() {
        g.mapv_inplace(|_| gauss(&mut r));
    }
    let mut opt = AdamW::new(&params, 0.05);
    opt.step(&mut params, &grads, 0.0).unwrap();
    assert_eq!(params, before);
}

#[test]
fn full_batch_loss_strictly_decreases() {
    let cfg = ModelConfig::small();
    let encoder = Encoder::new(cfg.clone()).unwrap();
    let mut params = ParameterSet::init(&cfg, 2).unwrap();
    let mut r = rng(51);
    let samples: Vec<Array2<f64>> = (0..4)
        .map(|_| {
            let mut x = gauss_matrix(4, 4 * cfg.patch_len, 0.3, &mut r);
            for (k, v) in x.row_mut(1).iter_mut().enumerate() {
                *v += (k as f64 * 0.7).sin();
            }
            x
        })
        .collect();
    let grids: Vec<_> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| masked_grid(&encoder, &params, s.view(), 0.5, 100 + i as u64).unwrap())
        .collect();
    let mut opt = AdamW::new(&params, 0.0);
    let mut prev = f64::INFINITY;
    for step in 0..20 {
        let mut total = params.zeros_like();
        let mut loss = 0.0;
        for g in &grids {
            let (l, grads) = reconstruction_loss(&encoder, &params, g, None, true).unwrap();
            loss += l / grids.len() as f64;
            total.axpy(1.0 / grids.len() as f64, &grads.unwrap());
        }
        assert!(loss < prev, "step {step}: {loss} !< {prev}");
        prev = loss;
        opt.step(&mut params, &total, 1e-3).unwrap();
    }
}

#[test]
fn resume_from_epoch_checkpoint_matches_uninterrupted_run() {
    let data = generate_synthetic(&SyntheticSpec {
        samples_per_class: 16,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = ModelConfig::small();
    let encoder = Encoder::new(cfg.clone()).unwrap();
    let pcfg = PretrainConfig {
        sched: ScheduleConfig {
            epochs: 3,
            ..ScheduleConfig::pretrain()
        },
        mask_ratio: 0.5,
        seed: 9,
    };
    let dir = tempfile::tempdir().unwrap();
    let fresh = TrainState::fresh(&cfg, 9, pcfg.sched.weight_decay).unwrap();
    let (_, full) = pretrain(&encoder, &data, &pcfg, fresh, Some(dir.path())).unwrap();
    let ck = Checkpoint::load(&dir.path().join("checkpoints").join("epoch_002")).unwrap();
    let state = TrainState::from_checkpoint(&ck, pcfg.sched.weight_decay);
    let (_, tail) = pretrain(&encoder, &data, &pcfg, state, None).unwrap();
    assert!(!tail.records.is_empty());
    let offset = full.records.len() - tail.records.len();
    for (a, b) in full.records[offset..].iter().zip(&tail.records) {
        assert_eq!((a.step, a.loss.to_bits()), (b.step, b.loss.to_bits()));
    }
}

fn finetune_setup() -> (Encoder, ParameterSet, crossbrain::eeg_io::SampleSet, Splits) {
    let cfg = ModelConfig::small();
    let data = generate_synthetic(&SyntheticSpec {
        samples_per_class: 25,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let splits = Splits::shuffled(data.len(), 0.6, 0.2, 3).unwrap();
    let params = ParameterSet::init(&cfg, 4).unwrap();
    (Encoder::new(cfg).unwrap(), params, data, splits)
}

fn quick() -> FinetuneOptions {
    FinetuneOptions {
        sched: ScheduleConfig {
            epochs: 2,
            ..ScheduleConfig::finetune()
        },
        ..FinetuneOptions::default()
    }
}

#[test]
fn frozen_finetune_leaves_encoder_untouched() {
    let (encoder, params, data, splits) = finetune_setup();
    let opts = FinetuneOptions { frozen: true, ..quick() };
    let out = finetune(&encoder, &params, &data, &splits, &TaskSpec::new(TaskKind::Binary), &opts).unwrap();
    for (name, t) in params.iter() {
        let after = out.params.get(name);
        assert!(t.iter().zip(after.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), "{name} changed");
    }
    assert!(out.params.contains("head.w1"));
}

#[test]
fn data_fraction_uses_floor_of_train_split() {
    let (encoder, params, data, splits) = finetune_setup();
    let opts = FinetuneOptions {
        data_fraction: 0.3,
        frozen: true,
        ..quick()
    };
    let spec = TaskSpec::new(TaskKind::Binary);
    let a = finetune(&encoder, &params, &data, &splits, &spec, &opts).unwrap();
    let b = finetune(&encoder, &params, &data, &splits, &spec, &opts).unwrap();
    assert_eq!(a.train_used.len(), (0.3 * splits.train.len() as f64).floor() as usize);
    assert_eq!(a.train_used, b.train_used);
    assert!(a.train_used.iter().all(|i| splits.train.contains(i)));
}

proptest! {
    #[test]
    fn clipped_norm_is_bounded(values in proptest::collection::vec(-1e3f64..1e3, 1..40), max in 1e-3f64..10.0) {
        let mut g = ParameterSet::new();
        g.insert("a", ArrayD::from_shape_vec(IxDyn(&[values.len()]), values.clone()).unwrap());
        let before = g.norm();
        let reported = clip_grad_norm(&mut g, max);
        prop_assert!((reported - before).abs() <= 1e-9 * before.max(1.0));
        prop_assert!(g.norm() <= max + 1e-9);
    }
}
