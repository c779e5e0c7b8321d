//! Fine-tuning, frozen-encoder probing, evaluation reports and metrics.

pub mod head;
pub mod metrics;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use head::{head_backward, head_backward_rows, head_forward, head_forward_rows, output_scores, task_loss, Monitor, TaskKind, TaskSpec};

use crate::eeg_io::{index_batches, sample_f64, Labels, SampleSet};
use crate::error::{ensure, Error, Result};
use crate::kv::KvDoc;
use crate::model::params::HEAD_PREFIX;
use crate::model::{flatten, Encoder, ParameterSet};
use crate::patching::to_patches;
use crate::training::{clip_grad_norm, cosine_lr, AdamW, LogRecord, ScheduleConfig, TrainLog};
use crate::util::{derive_seed, rng_for, stream};

// ---------------------------------------------------------------------------
// Splits

/// Explicit train/validation/test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

const SPLIT_FILES: [&str; 3] = ["train.txt", "val.txt", "test.txt"];

impl Splits {
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, idx) in SPLIT_FILES.iter().zip([&self.train, &self.val, &self.test]) {
            ensure!(!idx.is_empty(), Invalid, "split {name} is empty");
            ensure!(idx.iter().all(|&i| i < n), Invalid, "split {name} indexes beyond {n} samples");
        }
        Ok(())
    }

    /// Directory with `train.txt`, `val.txt`, `test.txt`, one index per line.
    pub fn read(dir: &Path) -> Result<Self> {
        let mut parts = Vec::new();
        for name in SPLIT_FILES {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let idx = text
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::format(&path, format!("bad index `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            parts.push(idx);
        }
        let test = parts.pop().expect("three parts");
        let val = parts.pop().expect("three parts");
        let train = parts.pop().expect("three parts");
        Ok(Self { train, val, test })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, idx) in SPLIT_FILES.iter().zip([&self.train, &self.val, &self.test]) {
            let text: String = idx.iter().map(|i| format!("{i}\n")).collect();
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Deterministic shuffled split with the given train and validation fractions.
    pub fn shuffled(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, &[stream::SUBSET]));
        let n_train = (train_frac * n as f64).round() as usize;
        let n_val = (val_frac * n as f64).round() as usize;
        ensure!(n_train + n_val < n, Config, "split fractions leave no test samples");
        let splits = Self {
            train: order[..n_train].to_vec(),
            val: order[n_train..n_train + n_val].to_vec(),
            test: order[n_train + n_val..].to_vec(),
        };
        splits.validate(n)?;
        Ok(splits)
    }
}

/// `floor(fraction * train.len())` training indices, chosen under `seed`.
pub fn subsample(train: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    ensure!(
        fraction > 0.0 && fraction <= 1.0,
        Config,
        "data fraction {fraction} outside (0, 1]"
    );
    let k = (fraction * train.len() as f64).floor() as usize;
    ensure!(k > 0, Invalid, "data fraction {fraction} of {} samples is empty", train.len());
    if k == train.len() {
        return Ok(train.to_vec());
    }
    let mut picked = train.to_vec();
    picked.shuffle(&mut rng_for(seed, &[stream::SUBSET, 1]));
    picked.truncate(k);
    Ok(picked)
}

// ---------------------------------------------------------------------------
// Predictions and reports

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: usize,
    /// Probability (binary), class probabilities (multiclass) or the predicted value.
    pub scores: Vec<f64>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub rows: Vec<Prediction>,
}

impl Predictions {
    pub fn to_csv(&self) -> String {
        let width = self.rows.first().map_or(1, |r| r.scores.len());
        let mut out = String::from("sample_id");
        for i in 0..width {
            write!(out, ",score_{i}").expect("string write");
        }
        out.push_str(",label\n");
        for r in &self.rows {
            write!(out, "{}", r.id).expect("string write");
            for s in &r.scores {
                write!(out, ",{s:?}").expect("string write");
            }
            writeln!(out, ",{}", r.label).expect("string write");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Hard class decisions (threshold 0.5 for binary, argmax otherwise).
    pub fn classes(&self, kind: TaskKind) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| match kind {
                TaskKind::Binary => usize::from(r.scores[0] >= 0.5),
                _ => r
                    .scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i),
            })
            .collect()
    }
}

/// Metrics of one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kind: TaskKind,
    pub n_samples: usize,
    pub metrics: Vec<(&'static str, f64)>,
}

impl EvalReport {
    pub fn from_predictions(kind: TaskKind, preds: &Predictions) -> Result<Self> {
        ensure!(!preds.rows.is_empty(), Invalid, "no predictions to evaluate");
        let labels: Vec<f64> = preds.rows.iter().map(|r| r.label).collect();
        let mut m: Vec<(&'static str, f64)> = Vec::new();
        match kind {
            TaskKind::Binary | TaskKind::Multiclass(_) => {
                let classes = preds.classes(kind);
                let truth: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
                m.push(("balanced_accuracy", metrics::balanced_accuracy(&classes, &truth)?));
                m.push(("cohen_kappa", metrics::cohen_kappa(&classes, &truth).unwrap_or(f64::NAN)));
                m.push(("weighted_f1", metrics::weighted_f1(&classes, &truth)?));
                if kind == TaskKind::Binary {
                    let scores: Vec<f64> = preds.rows.iter().map(|r| r.scores[0]).collect();
                    let pos: Vec<bool> = truth.iter().map(|&c| c == 1).collect();
                    m.push(("auroc", metrics::auroc(&scores, &pos).unwrap_or(f64::NAN)));
                    m.push(("auc_pr", metrics::auc_pr(&scores, &pos).unwrap_or(f64::NAN)));
                }
            }
            TaskKind::Regression => {
                let values: Vec<f64> = preds.rows.iter().map(|r| r.scores[0]).collect();
                m.push(("pearson_r", metrics::pearson(&values, &labels).unwrap_or(f64::NAN)));
                m.push(("r2", metrics::r2(&values, &labels).unwrap_or(f64::NAN)));
                m.push(("rmse", metrics::rmse(&values, &labels)?));
            }
        }
        Ok(Self {
            kind,
            n_samples: preds.rows.len(),
            metrics: m,
        })
    }

    /// Metric value; NaN when absent or undefined for this prediction set.
    pub fn get(&self, key: &str) -> f64 {
        self.metrics
            .iter()
            .find(|(k, _)| *k == key)
            .map_or(f64::NAN, |(_, v)| *v)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("kind", self.kind);
        doc.set("n_samples", self.n_samples);
        for (k, v) in &self.metrics {
            doc.set(*k, v);
        }
        doc
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_kv())
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOptions {
    pub sched: ScheduleConfig,
    pub seed: u64,
    /// Train only the head on fixed encoder features.
    pub frozen: bool,
    pub data_fraction: f64,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            sched: ScheduleConfig::finetune(),
            seed: 0,
            frozen: false,
            data_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Encoder plus head at the best validation epoch.
    pub params: ParameterSet,
    pub best_epoch: usize,
    /// Monitor value per epoch on the validation split.
    pub monitor_history: Vec<f64>,
    pub test: EvalReport,
    pub test_predictions: Predictions,
    pub log: TrainLog,
    /// Training indices actually used (after sub-sampling).
    pub train_used: Vec<usize>,
}

/// `(C, n)` token grid implied by the samples of `data`.
pub fn grid_of(encoder: &Encoder, data: &SampleSet) -> Result<(usize, usize)> {
    let (c, t) = data.shape().ok_or_else(|| Error::Invalid("empty sample set".into()))?;
    let n = t / encoder.config().patch_len;
    ensure!(n >= 1, Shape, "samples of {t} points are shorter than one patch");
    Ok((c, n))
}

/// Fresh head for `spec` over the flattened grid.
pub fn init_head(encoder: &Encoder, grid: (usize, usize), spec: &TaskSpec, seed: u64) -> ParameterSet {
    let in_dim = grid.0 * grid.1 * encoder.config().d;
    ParameterSet::from_specs(&spec.head_specs(in_dim), derive_seed(seed, &[stream::HEAD_INIT]))
}

fn label_value(data: &SampleSet, i: usize) -> Result<f64> {
    data.labels
        .as_ref()
        .map(|l| l.value(i))
        .ok_or_else(|| Error::Invalid("sample set has no labels".into()))
}

/// Evaluation-mode flattened encoder outputs, one row per index of `idx`.
pub fn feature_matrix(encoder: &Encoder, params: &ParameterSet, data: &SampleSet, idx: &[usize]) -> Result<Array2<f64>> {
    let rows = idx
        .par_iter()
        .map(|&i| {
            let x = sample_f64(data.samples[i].view());
            let grid = to_patches(x.view(), encoder.config().patch_len)?;
            let (repr, _) = encoder.forward(&grid, params, None)?;
            Ok(flatten(&repr))
        })
        .collect::<Result<Vec<Array1<f64>>>>()?;
    stack_rows(&rows)
}

fn stack_rows(rows: &[Array1<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

fn predict_rows(kind: TaskKind, params: &ParameterSet, feats: ArrayView2<f64>, idx: &[usize], data: &SampleSet) -> Result<Predictions> {
    let (out, _) = head::head_forward_rows(feats, params)?;
    let rows = idx
        .iter()
        .zip(out.outer_iter())
        .map(|(&i, o)| {
            Ok(Prediction {
                id: i,
                scores: output_scores(kind, o).to_vec(),
                label: label_value(data, i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Predictions { rows })
}

/// Evaluation-mode predictions for the samples `idx`.
pub fn predict(encoder: &Encoder, params: &ParameterSet, data: &SampleSet, idx: &[usize], kind: TaskKind) -> Result<Predictions> {
    let feats = feature_matrix(encoder, params, data, idx)?;
    predict_rows(kind, params, feats.view(), idx, data)
}

pub fn evaluate(encoder: &Encoder, params: &ParameterSet, data: &SampleSet, idx: &[usize], spec: &TaskSpec) -> Result<(EvalReport, Predictions)> {
    let preds = predict(encoder, params, data, idx, spec.kind)?;
    Ok((EvalReport::from_predictions(spec.kind, &preds)?, preds))
}

/// Mean task loss over the rows of `feats` and its gradient on each row.
/// Head gradients are accumulated into `grads`.
fn head_step(
    spec: &TaskSpec,
    params: &ParameterSet,
    feats: ArrayView2<f64>,
    labels: &[f64],
    grads: &mut ParameterSet,
) -> Result<(f64, Array2<f64>)> {
    let (out, cache) = head::head_forward_rows(feats, params)?;
    let scale = 1.0 / labels.len() as f64;
    let mut dout = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for ((o, mut d), &y) in out.outer_iter().zip(dout.outer_iter_mut()).zip(labels) {
        let (l, g) = task_loss(spec, o, y)?;
        loss += l;
        d.assign(&(g * scale));
    }
    let dfeats = head::head_backward_rows(&cache, params, dout.view(), grads);
    Ok((loss * scale, dfeats))
}

fn split_head(set: &ParameterSet) -> (ParameterSet, ParameterSet) {
    let (mut enc, mut head) = (ParameterSet::new(), ParameterSet::new());
    for (k, t) in set.iter() {
        let target = if k.starts_with(HEAD_PREFIX) { &mut head } else { &mut enc };
        target.insert(k, t.clone());
    }
    (enc, head)
}

/// Mean loss and gradients of a batch through encoder and head.
#[allow(clippy::too_many_arguments)]
fn full_step(
    encoder: &Encoder,
    params: &ParameterSet,
    data: &SampleSet,
    members: &[usize],
    spec: &TaskSpec,
    seed: u64,
    step: u64,
    grads: &mut ParameterSet,
) -> Result<f64> {
    let dropout = encoder.config().dropout > 0.0;
    let forwards = members
        .par_iter()
        .map(|&i| {
            let x = sample_f64(data.samples[i].view());
            let grid = to_patches(x.view(), encoder.config().patch_len)?;
            let mut rng = dropout.then(|| rng_for(seed, &[stream::DROPOUT, step, i as u64]));
            let (repr, cache) = encoder.forward(&grid, params, rng.as_mut())?;
            Ok((grid, repr, cache))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Array1<f64>> = forwards.iter().map(|(_, r, _)| flatten(r)).collect();
    let labels = members.iter().map(|&i| label_value(data, i)).collect::<Result<Vec<_>>>()?;
    let (loss, dfeats) = head_step(spec, params, stack_rows(&rows)?.view(), &labels, grads)?;
    let template = split_head(grads).0.zeros_like();
    let per_sample: Vec<ParameterSet> = forwards
        .par_iter()
        .enumerate()
        .map(|(r, (grid, repr, cache))| {
            let mut g = template.clone();
            let d_repr = dfeats.row(r).to_shape(repr.tokens.raw_dim()).expect("contiguous").to_owned();
            encoder.backward(cache, grid, params, d_repr.view(), &mut g);
            g
        })
        .collect();
    // fixed-order reduction keeps runs bit-reproducible
    for g in &per_sample {
        grads.axpy(1.0, g);
    }
    Ok(loss)
}

/// Fine-tune encoder and head (or only the head when `opts.frozen`), keep
/// the epoch with the best validation monitor, and report test metrics for it.
/// Ties go to the later epoch.
pub fn finetune(
    encoder: &Encoder,
    encoder_params: &ParameterSet,
    data: &SampleSet,
    splits: &Splits,
    spec: &TaskSpec,
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome> {
    spec.validate()?;
    opts.sched.validate()?;
    splits.validate(data.len())?;
    let labels = data.labels.as_ref().ok_or_else(|| Error::Invalid("fine-tuning needs labels".into()))?;
    spec.check_labels(labels)?;
    let train = subsample(&splits.train, opts.data_fraction, opts.seed)?;
    let grid = grid_of(encoder, data)?;

    let mut params = encoder_params.clone();
    for (k, t) in init_head(encoder, grid, spec, opts.seed).iter() {
        params.insert(k, t.clone());
    }
    let trainable = if opts.frozen { split_head(&params).1 } else { params.clone() };
    let mut opt = AdamW::new(&trainable, opts.sched.weight_decay);

    // a frozen encoder's features never change: compute them once
    let frozen_feats = if opts.frozen {
        Some((
            feature_matrix(encoder, &params, data, &train)?,
            feature_matrix(encoder, &params, data, &splits.val)?,
            feature_matrix(encoder, &params, data, &splits.test)?,
        ))
    } else {
        None
    };

    let spe = train.len().div_ceil(opts.sched.batch_size);
    let monitor = spec.monitor();
    let mut log = TrainLog::default();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParameterSet)> = None;
    let mut step = 0u64;
    for epoch in 0..opts.sched.epochs {
        let order = index_batches(train.len(), opts.sched.batch_size, Some(derive_seed(opts.seed, &[stream::DATA_ORDER, epoch as u64])))?;
        for batch in order {
            if opts.sched.max_steps > 0 && step >= opts.sched.max_steps {
                break;
            }
            let lr = cosine_lr(step, spe, &opts.sched);
            let members: Vec<usize> = batch.iter().map(|&b| train[b]).collect();
            let mut total = trainable.zeros_like();
            let loss = match &frozen_feats {
                Some((tr, _, _)) => {
                    let labels = members.iter().map(|&i| label_value(data, i)).collect::<Result<Vec<_>>>()?;
                    head_step(spec, &params, tr.select(Axis(0), &batch).view(), &labels, &mut total)?.0
                }
                None => full_step(encoder, &params, data, &members, spec, opts.seed, step, &mut total)?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite { name: "fine-tune loss".into() });
            }
            total.check_finite()?;
            let grad_norm = clip_grad_norm(&mut total, opts.sched.grad_clip_norm);
            opt.step(&mut params, &total, lr)?;
            log.push(LogRecord {
                step,
                epoch,
                loss,
                lr,
                grad_norm,
            });
            step += 1;
        }
        let val_preds = match &frozen_feats {
            Some((_, va, _)) => predict_rows(spec.kind, &params, va.view(), &splits.val, data)?,
            None => predict(encoder, &params, data, &splits.val, spec.kind)?,
        };
        let score = EvalReport::from_predictions(spec.kind, &val_preds)?.get(monitor.key());
        history.push(score);
        let better = match &best {
            None => true,
            Some((b, _, _)) => score >= *b || (b.is_nan() && !score.is_nan()),
        };
        if better {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.ok_or_else(|| Error::Config("no fine-tuning epochs ran".into()))?;
    let test_predictions = match &frozen_feats {
        Some((_, _, te)) => predict_rows(spec.kind, &best_params, te.view(), &splits.test, data)?,
        None => predict(encoder, &best_params, data, &splits.test, spec.kind)?,
    };
    let test = EvalReport::from_predictions(spec.kind, &test_predictions)?;
    Ok(FinetuneOutcome {
        params: best_params,
        best_epoch,
        monitor_history: history,
        test,
        test_predictions,
        log,
        train_used: train,
    })
}

/// Head-only training on a frozen encoder.
pub fn frozen_probe(
    encoder: &Encoder,
    encoder_params: &ParameterSet,
    data: &SampleSet,
    splits: &Splits,
    spec: &TaskSpec,
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome> {
    finetune(encoder, encoder_params, data, splits, spec, &FinetuneOptions { frozen: true, ..opts.clone() })
}

/// Class labels as `f64` for callers assembling predictions by hand.
pub fn labels_as_f64(labels: &Labels) -> Vec<f64> {
    (0..labels.len()).map(|i| labels.value(i)).collect()
}
