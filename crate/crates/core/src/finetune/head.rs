//! Task specification, the perceptron head and fine-tuning losses.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{ensure, Error, Result};
use crate::eeg_io::Labels;
use crate::kv::{parse_value, KvDoc};
use crate::model::ops;
use crate::model::params::{head_specs, ParameterSet, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Binary,
    Multiclass(usize),
    Regression,
}

impl TaskKind {
    pub fn outputs(&self) -> usize {
        match self {
            TaskKind::Multiclass(k) => *k,
            _ => 1,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "binary" => Ok(TaskKind::Binary),
            None if s == "regression" => Ok(TaskKind::Regression),
            Some(("multiclass", k)) => {
                let k: usize = parse_value("task.kind", k)?;
                ensure!(k >= 2, Config, "multiclass task needs >= 2 classes");
                Ok(TaskKind::Multiclass(k))
            }
            _ => Err(Error::Config(format!(
                "unknown task kind `{s}` (binary, multiclass:<k>, regression)"
            ))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Binary => f.write_str("binary"),
            TaskKind::Multiclass(k) => write!(f, "multiclass:{k}"),
            TaskKind::Regression => f.write_str("regression"),
        }
    }
}

/// Validation metric used to pick the best epoch (always maximised).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    Auroc,
    Kappa,
    R2,
}

impl Monitor {
    pub fn key(&self) -> &'static str {
        match self {
            Monitor::Auroc => "auroc",
            Monitor::Kappa => "cohen_kappa",
            Monitor::R2 => "r2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub hidden: usize,
    pub label_smoothing: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::new(TaskKind::Binary)
    }
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            hidden: 256,
            label_smoothing: 0.1,
        }
    }

    pub fn monitor(&self) -> Monitor {
        match self.kind {
            TaskKind::Binary => Monitor::Auroc,
            TaskKind::Multiclass(_) => Monitor::Kappa,
            TaskKind::Regression => Monitor::R2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden >= 1, Config, "head hidden width must be >= 1");
        ensure!(
            (0.0..1.0).contains(&self.label_smoothing),
            Config,
            "label smoothing {} outside [0, 1)",
            self.label_smoothing
        );
        Ok(())
    }

    pub fn head_specs(&self, in_dim: usize) -> Vec<TensorSpec> {
        head_specs(in_dim, self.hidden, self.kind.outputs())
    }

    /// Labels must match the task kind and lie in range.
    pub fn check_labels(&self, labels: &Labels) -> Result<()> {
        match (self.kind, labels) {
            (TaskKind::Regression, Labels::Target(_)) => Ok(()),
            (TaskKind::Binary, Labels::Class(v)) => {
                ensure!(v.iter().all(|&c| c < 2), Invalid, "binary labels must be 0 or 1");
                Ok(())
            }
            (TaskKind::Multiclass(k), Labels::Class(v)) => {
                ensure!(v.iter().all(|&c| c < k), Invalid, "class label outside 0..{k}");
                Ok(())
            }
            (kind, _) => Err(Error::Invalid(format!("labels do not match task kind {kind}"))),
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("kind", self.kind);
        doc.set("hidden", self.hidden);
        doc.set("label_smoothing", self.label_smoothing);
        doc
    }

    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "kind" => self.kind = raw.trim().parse()?,
            "hidden" => self.hidden = parse_value(key, raw)?,
            "label_smoothing" => self.label_smoothing = parse_value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown task key `{key}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    x: Array2<f64>,
    hidden: Array2<f64>,
    act: Array2<f64>,
}

/// Head outputs for each row of `x: [B, C*n*d]`.
pub fn head_forward_rows(x: ArrayView2<f64>, params: &ParameterSet) -> Result<(Array2<f64>, HeadCache)> {
    let w1 = params.v2("head.w1");
    ensure!(
        x.ncols() == w1.nrows(),
        Shape,
        "head expects {} inputs (C*n*d), got {}",
        w1.nrows(),
        x.ncols()
    );
    let hidden = ops::linear(x, w1, params.v1("head.b1"));
    let act = ops::gelu(&hidden);
    let out = ops::linear(act.view(), params.v2("head.w2"), params.v1("head.b2"));
    Ok((
        out,
        HeadCache {
            x: x.to_owned(),
            hidden,
            act,
        },
    ))
}

/// Accumulates head gradients summed over rows; returns the input gradients.
pub fn head_backward_rows(cache: &HeadCache, params: &ParameterSet, dout: ArrayView2<f64>, grads: &mut ParameterSet) -> Array2<f64> {
    let (dact, dw2, db2) = ops::linear_backward(cache.act.view(), params.v2("head.w2"), dout);
    grads.accumulate("head.w2", &dw2.into_dyn());
    grads.accumulate("head.b2", &db2.into_dyn());
    let dh = ops::gelu_backward(&cache.hidden, &dact);
    let (dx, dw1, db1) = ops::linear_backward(cache.x.view(), params.v2("head.w1"), dh.view());
    grads.accumulate("head.w1", &dw1.into_dyn());
    grads.accumulate("head.b1", &db1.into_dyn());
    dx
}

pub fn head_forward(x: ArrayView1<f64>, params: &ParameterSet) -> Result<(Array1<f64>, HeadCache)> {
    let (out, cache) = head_forward_rows(x.insert_axis(Axis(0)), params)?;
    Ok((out.index_axis_move(Axis(0), 0), cache))
}

pub fn head_backward(cache: &HeadCache, params: &ParameterSet, dout: ArrayView1<f64>, grads: &mut ParameterSet) -> Array1<f64> {
    head_backward_rows(cache, params, dout.insert_axis(Axis(0)), grads).index_axis_move(Axis(0), 0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability-like score for reporting: sigmoid (binary), softmax (multiclass), identity.
pub fn output_scores(kind: TaskKind, out: ArrayView1<f64>) -> Array1<f64> {
    match kind {
        TaskKind::Binary => out.mapv(sigmoid),
        TaskKind::Multiclass(_) => ops::softmax_rows(out.to_owned().insert_axis(Axis(0))).index_axis_move(Axis(0), 0),
        TaskKind::Regression => out.to_owned(),
    }
}

/// Per-sample loss and its gradient on the head output.
/// `label` is the class index (as `f64`) or the regression target.
pub fn task_loss(spec: &TaskSpec, out: ArrayView1<f64>, label: f64) -> Result<(f64, Array1<f64>)> {
    ensure!(out.len() == spec.kind.outputs(), Shape, "head emitted {} values", out.len());
    match spec.kind {
        TaskKind::Binary => {
            ensure!(label == 0.0 || label == 1.0, Invalid, "binary label {label} not in {{0, 1}}");
            let z = out[0];
            let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
            Ok((loss, Array1::from_elem(1, sigmoid(z) - label)))
        }
        TaskKind::Multiclass(k) => {
            ensure!(
                label >= 0.0 && label.fract() == 0.0 && (label as usize) < k,
                Invalid,
                "class label {label} outside 0..{k}"
            );
            let eps = spec.label_smoothing;
            let max = out.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let q = Array1::from_shape_fn(k, |c| eps / k as f64 + if c == label as usize { 1.0 - eps } else { 0.0 });
            let loss = -q.iter().zip(out.iter()).map(|(qc, z)| qc * (z - lse)).sum::<f64>();
            let p = out.mapv(|z| (z - lse).exp());
            Ok((loss, p - q))
        }
        TaskKind::Regression => {
            let diff = out[0] - label;
            Ok((diff * diff, Array1::from_elem(1, 2.0 * diff)))
        }
    }
}
