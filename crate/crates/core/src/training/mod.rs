//! Optimiser, schedule, gradient plumbing and the masked-reconstruction
//! pretraining loop.

pub mod gradcheck;
pub mod objective;
pub mod optim;
pub mod pretrain;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::kv::{parse_value, KvDoc};
use crate::model::ParameterSet;

pub use objective::{masked_grid, reconstruction_loss};
pub use optim::AdamW;
pub use pretrain::{pretrain, pretrain_continuing, steps_per_epoch, PretrainConfig, TrainState};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    /// Cosine period in epochs (fractional epochs allowed).
    pub cycle_epochs: f64,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Stop after this many optimiser steps; 0 disables the cap.
    pub max_steps: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl ScheduleConfig {
    /// Desk-scale pretraining: batch 16, 5 epochs.
    pub fn pretrain() -> Self {
        Self {
            base_lr: 5e-4,
            min_lr: 1e-5,
            cycle_epochs: 5.0,
            epochs: 5,
            grad_clip_norm: 1.0,
            weight_decay: 5e-2,
            batch_size: 16,
            max_steps: 0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            base_lr: 1e-4,
            min_lr: 1e-6,
            cycle_epochs: 20.0,
            epochs: 20,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.min_lr >= 0.0 && self.min_lr <= self.base_lr,
            Config,
            "need 0 <= min_lr ({}) <= base_lr ({})",
            self.min_lr,
            self.base_lr
        );
        ensure!(self.cycle_epochs > 0.0, Config, "cycle_epochs must be > 0");
        ensure!(self.epochs >= 1, Config, "epochs must be >= 1");
        ensure!(self.batch_size >= 1, Config, "batch_size must be >= 1");
        ensure!(self.grad_clip_norm > 0.0, Config, "grad_clip_norm must be > 0");
        ensure!(self.weight_decay >= 0.0, Config, "weight_decay must be >= 0");
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("base_lr", self.base_lr);
        doc.set("min_lr", self.min_lr);
        doc.set("cycle_epochs", self.cycle_epochs);
        doc.set("epochs", self.epochs);
        doc.set("grad_clip_norm", self.grad_clip_norm);
        doc.set("weight_decay", self.weight_decay);
        doc.set("batch_size", self.batch_size);
        doc.set("max_steps", self.max_steps);
        doc
    }

    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "base_lr" => self.base_lr = parse_value(key, raw)?,
            "min_lr" => self.min_lr = parse_value(key, raw)?,
            "cycle_epochs" => self.cycle_epochs = parse_value(key, raw)?,
            "epochs" => self.epochs = parse_value(key, raw)?,
            "grad_clip_norm" => self.grad_clip_norm = parse_value(key, raw)?,
            "weight_decay" => self.weight_decay = parse_value(key, raw)?,
            "batch_size" => self.batch_size = parse_value(key, raw)?,
            "max_steps" => self.max_steps = parse_value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown schedule key `{key}`"))),
        }
        Ok(())
    }
}

/// Cosine annealing on the fractional epoch `step / steps_per_epoch`,
/// held at `min_lr` past the end of the cycle.
pub fn cosine_lr(step: u64, steps_per_epoch: usize, sched: &ScheduleConfig) -> f64 {
    let e = step as f64 / steps_per_epoch.max(1) as f64;
    let phase = (e / sched.cycle_epochs).min(1.0);
    sched.min_lr + (sched.base_lr - sched.min_lr) * (1.0 + (PI * phase).cos()) / 2.0
}

/// Rescale so the global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Per-step training records, stored as CSV with a header line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

const LOG_HEADER: &str = "step,epoch,loss,lr,grad_norm";

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|p| p.step < r.step));
        self.records.push(r);
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Trailing moving average with the given window.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let losses = self.losses();
        (0..losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    /// `(first full-window value, last value)` of [`Self::smoothed`].
    pub fn smoothed_endpoints(&self, window: usize) -> Option<(f64, f64)> {
        let s = self.smoothed(window);
        let first = *s.get(window.max(1) - 1).or(s.last())?;
        Some((first, *s.last()?))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            // `{:?}` prints the shortest round-tripping representation
            writeln!(out, "{},{},{:?},{:?},{:?}", r.step, r.epoch, r.loss, r.lr, r.grad_norm).expect("string write");
        }
        out
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::format(origin, "missing training log header"));
        }
        let mut log = TrainLog::default();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::format(origin, format!("line {}: malformed record `{line}`", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            log.records.push(LogRecord {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
                lr: f[3].parse().map_err(|_| bad())?,
                grad_norm: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}
