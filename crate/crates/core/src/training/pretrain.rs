//! Masked-reconstruction pretraining loop.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::objective::{masked_grid, reconstruction_loss};
use super::optim::AdamW;
use super::{clip_grad_norm, cosine_lr, LogRecord, ScheduleConfig, TrainLog};
use crate::eeg_io::{index_batches, sample_f64, SampleSet};
use crate::error::{ensure, Error, Result};
use crate::model::{Checkpoint, Encoder, ModelConfig, ParameterSet};
use crate::util::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub sched: ScheduleConfig,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            sched: ScheduleConfig::pretrain(),
            mask_ratio: 0.5,
            seed: 0,
        }
    }
}

/// Parameters, optimizer and position of a (possibly resumed) run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParameterSet,
    pub opt: AdamW,
    pub step: u64,
}

impl TrainState {
    pub fn fresh(cfg: &ModelConfig, seed: u64, weight_decay: f64) -> Result<Self> {
        let params = ParameterSet::init(cfg, derive_seed(seed, &[stream::INIT]))?;
        let opt = AdamW::new(&params, weight_decay);
        Ok(Self { params, opt, step: 0 })
    }

    pub fn from_checkpoint(ck: &Checkpoint, weight_decay: f64) -> Self {
        let opt = if ck.state.is_empty() {
            AdamW::new(&ck.params, weight_decay)
        } else {
            AdamW::from_state(&ck.state, ck.meta.parse_key("adam_step").unwrap_or(ck.step), weight_decay)
        };
        Self {
            params: ck.params.clone(),
            opt,
            step: ck.step,
        }
    }

    pub fn to_checkpoint(&self, cfg: &ModelConfig, epoch: usize) -> Checkpoint {
        let mut ck = Checkpoint::new(cfg.clone(), self.params.clone());
        ck.state = self.opt.to_state();
        ck.step = self.step;
        ck.epoch = epoch;
        ck.meta.set("adam_step", self.opt.step);
        ck
    }

    /// Round parameters and moments to storage precision.
    fn snap(&mut self) {
        self.params.snap_to_f32();
        self.opt.snap_to_f32();
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// One optimiser step over `batch`; returns `(mean loss, pre-clip grad norm)`.
fn train_step(
    encoder: &Encoder,
    data: &SampleSet,
    batch: &[usize],
    state: &mut TrainState,
    pcfg: &PretrainConfig,
    lr: f64,
) -> Result<(f64, f64)> {
    let step = state.step;
    let params = &state.params;
    let dropout = encoder.config().dropout > 0.0;
    let per_sample: Vec<Result<(f64, ParameterSet)>> = batch
        .par_iter()
        .map(|&idx| {
            let x = sample_f64(data.samples[idx].view());
            let grid = masked_grid(encoder, params, x.view(), pcfg.mask_ratio, derive_seed(pcfg.seed, &[stream::MASK, step, idx as u64]))?;
            let mut rng = dropout.then(|| rng_for(pcfg.seed, &[stream::DROPOUT, step, idx as u64]));
            let (loss, grads) = reconstruction_loss(encoder, params, &grid, rng.as_mut(), true)?;
            Ok((loss, grads.expect("requested")))
        })
        .collect();
    // fixed-order reduction keeps runs bit-reproducible
    let mut total = state.params.zeros_like();
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        total.axpy(1.0, &g);
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    total.scale(scale);
    if !loss.is_finite() {
        return Err(Error::NonFinite { name: "loss".into() });
    }
    total.check_finite()?;
    let norm = clip_grad_norm(&mut total, pcfg.sched.grad_clip_norm);
    state.opt.step(&mut state.params, &total, lr)?;
    state.step += 1;
    Ok((loss, norm))
}

fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:03}"))
}

/// Run (or resume) pretraining until `sched.epochs` or `sched.max_steps`.
/// With `out_dir`, writes `train_log.csv`, a checkpoint per epoch and
/// `checkpoints/final`; a non-finite loss leaves `checkpoints/diagnostic`.
pub fn pretrain(
    encoder: &Encoder,
    data: &SampleSet,
    pcfg: &PretrainConfig,
    state: TrainState,
    out_dir: Option<&Path>,
) -> Result<(TrainState, TrainLog)> {
    pretrain_continuing(encoder, data, pcfg, state, TrainLog::default(), out_dir)
}

/// [`pretrain`] appending to `log` (records of an interrupted run).
pub fn pretrain_continuing(
    encoder: &Encoder,
    data: &SampleSet,
    pcfg: &PretrainConfig,
    mut state: TrainState,
    mut log: TrainLog,
    out_dir: Option<&Path>,
) -> Result<(TrainState, TrainLog)> {
    ensure!(!data.is_empty(), Invalid, "pretraining set is empty");
    pcfg.sched.validate()?;
    ensure!(
        pcfg.mask_ratio > 0.0 && pcfg.mask_ratio <= 1.0,
        Config,
        "mask ratio {} outside (0, 1]",
        pcfg.mask_ratio
    );
    let cfg = encoder.config();
    let sched = &pcfg.sched;
    let spe = steps_per_epoch(data.len(), sched.batch_size);
    log.records.retain(|r| r.step < state.step);
    let start_epoch = (state.step / spe as u64) as usize;
    let skip = (state.step % spe as u64) as usize;
    let capped = |s: u64| sched.max_steps > 0 && s >= sched.max_steps;

    'epochs: for epoch in start_epoch..sched.epochs {
        let order = index_batches(data.len(), sched.batch_size, Some(derive_seed(pcfg.seed, &[stream::DATA_ORDER, epoch as u64])))?;
        let to_skip = if epoch == start_epoch { skip } else { 0 };
        for batch in order.skip(to_skip) {
            if capped(state.step) {
                break 'epochs;
            }
            let lr = cosine_lr(state.step, spe, sched);
            let step = state.step;
            match train_step(encoder, data, &batch, &mut state, pcfg, lr) {
                Ok((loss, grad_norm)) => log.push(LogRecord {
                    step,
                    epoch,
                    loss,
                    lr,
                    grad_norm,
                }),
                Err(e @ (Error::NonFinite { .. } | Error::Numeric(_))) => {
                    if let Some(out) = out_dir {
                        state.to_checkpoint(cfg, epoch).save(&out.join("checkpoints").join("diagnostic"))?;
                        log.write(&out.join("train_log.csv"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        state.snap();
        if let Some(out) = out_dir {
            state.to_checkpoint(cfg, epoch + 1).save(&checkpoint_dir(out, epoch + 1))?;
            log.write(&out.join("train_log.csv"))?;
        }
    }
    state.snap();
    if let Some(out) = out_dir {
        let epoch = (state.step / spe as u64) as usize;
        state.to_checkpoint(cfg, epoch).save(&out.join("checkpoints").join("final"))?;
        log.write(&out.join("train_log.csv"))?;
    }
    Ok((state, log))
}
