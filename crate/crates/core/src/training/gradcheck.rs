//! Central-difference gradient check of the full model plus a task head.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Result};
use crate::finetune::{head_backward, head_forward, task_loss, TaskKind, TaskSpec};
use crate::model::encoder::reconstruct_backward;
use crate::model::{flatten, masked_mse_grad, reconstruct, Encoder, ModelConfig, ParameterSet};
use crate::patching::{to_patches, with_mask, MaskToken, PatchGrid};
use crate::util::{derive_seed, rng_for, stream};

/// Parameter families every check must cover.
pub const FAMILIES: [&str; 9] = ["conv", "norm", "attention", "ffn", "head", "pe", "freq", "recon", "token"];

pub fn family_of(name: &str) -> &'static str {
    if name.starts_with("head.") {
        "head"
    } else if name == "mask_token" {
        "token"
    } else if name.starts_with("patch.conv") {
        "conv"
    } else if name.starts_with("patch.freq") {
        "freq"
    } else if name.starts_with("pe.") {
        "pe"
    } else if name.starts_with("recon.") {
        "recon"
    } else if name.contains(".ffn.") {
        "ffn"
    } else if name.starts_with("patch.gn") || name.contains(".norm") || name.ends_with("_norm") {
        "norm"
    } else {
        "attention"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub channels: usize,
    pub seq_len: usize,
    pub coords: usize,
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub tolerance: f64,
    pub seed: u64,
    #[doc(hidden)]
    pub corrupt: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                learnable_mask_token: true,
                ..ModelConfig::tiny()
            },
            channels: 4,
            seq_len: 4,
            coords: 200,
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-4,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<CoordCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    /// Worst relative error per family; families without coordinates are absent.
    pub fn by_family(&self) -> Vec<(&'static str, usize, f64)> {
        FAMILIES
            .iter()
            .filter_map(|&f| {
                let errs: Vec<f64> = self
                    .checks
                    .iter()
                    .filter(|c| family_of(&c.name) == f)
                    .map(|c| c.rel_error)
                    .collect();
                (!errs.is_empty()).then(|| (f, errs.len(), errs.iter().copied().fold(0.0, f64::max)))
            })
            .collect()
    }

    pub fn missing_families(&self) -> Vec<&'static str> {
        let seen: Vec<&str> = self.by_family().iter().map(|f| f.0).collect();
        FAMILIES.iter().copied().filter(|f| !seen.contains(f)).collect()
    }

    pub fn passed(&self) -> bool {
        self.missing_families().is_empty() && self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "coordinates={}", self.checks.len())?;
        for (fam, n, worst) in self.by_family() {
            writeln!(f, "family.{fam}={n} worst={worst:.3e}")?;
        }
        write!(f, "max_rel_error={:.3e} passed={}", self.max_rel_error(), self.passed())
    }
}

struct Problem {
    encoder: Encoder,
    base: PatchGrid,
    mask: Array2<u8>,
    spec: TaskSpec,
    label: f64,
}

impl Problem {
    fn grid(&self, params: &ParameterSet) -> Result<PatchGrid> {
        with_mask(&self.base, self.mask.clone(), MaskToken::Learnable, Some(params.v1("mask_token")))
    }

    /// Masked reconstruction error plus the head loss on the flattened output.
    fn loss(&self, params: &ParameterSet, grads: Option<&mut ParameterSet>) -> Result<f64> {
        let grid = self.grid(params)?;
        let (repr, cache) = self.encoder.forward(&grid, params, None)?;
        let pred = reconstruct(&repr, params);
        let (mse, dpred) = masked_mse_grad(&pred, grid.targets(), &grid.mask)?;
        let (out, hc) = head_forward(flatten(&repr).view(), params)?;
        let (task, dout) = task_loss(&self.spec, out.view(), self.label)?;
        if let Some(grads) = grads {
            let mut d_repr = reconstruct_backward(&repr, params, dpred.view(), grads);
            let dflat = head_backward(&hc, params, dout.view(), grads);
            d_repr += &dflat.to_shape(d_repr.raw_dim()).expect("contiguous");
            self.encoder.backward(&cache, &grid, params, d_repr.view(), grads);
        }
        Ok(mse + task)
    }
}

/// Compare analytic and central-difference gradients on at least
/// `cfg.coords` coordinates, with at least one coordinate in every tensor.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    ensure!(cfg.model.learnable_mask_token, Config, "gradient check needs the learnable mask token");
    ensure!(cfg.step > 0.0 && cfg.floor > 0.0, Config, "step and floor must be positive");
    let encoder = Encoder::new(cfg.model.clone())?;
    let t = cfg.model.patch_len;
    let mut rng = rng_for(cfg.seed, &[stream::GRADCHECK]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sample = Array2::from_shape_simple_fn((cfg.channels, cfg.seq_len * t), || normal.sample(&mut rng));
    let base = to_patches(sample.view(), t)?;
    let mut mask = Array2::from_shape_simple_fn((cfg.channels, cfg.seq_len), || u8::from(rng.random::<f64>() < 0.5));
    mask[[0, 0]] = 1;
    mask[[cfg.channels - 1, cfg.seq_len - 1]] = 0;
    let spec = TaskSpec {
        kind: TaskKind::Multiclass(3),
        hidden: 8,
        label_smoothing: 0.1,
    };

    // jitter every tensor so zero-initialised biases, unit scales and the
    // zero mask token do not sit at special points
    let mut params = ParameterSet::init(&cfg.model, derive_seed(cfg.seed, &[stream::INIT]))?;
    let in_dim = cfg.channels * cfg.seq_len * cfg.model.d;
    for (k, v) in ParameterSet::from_specs(&spec.head_specs(in_dim), derive_seed(cfg.seed, &[stream::HEAD_INIT])).iter() {
        params.insert(k, v.clone());
    }
    let jitter = Normal::new(0.0, 0.1).expect("valid std");
    for (_, v) in params.iter_mut() {
        v.mapv_inplace(|x| x + jitter.sample(&mut rng));
    }
    let problem = Problem {
        encoder,
        base,
        mask,
        spec,
        label: 1.0,
    };

    let mut analytic = params.zeros_like();
    problem.loss(&params, Some(&mut analytic))?;
    if let Some(c) = cfg.corrupt {
        analytic.scale(1.0 + c);
    }

    let sizes: Vec<(String, usize)> = params.iter().map(|(k, v)| (k.to_string(), v.len())).collect();
    let mut picked = BTreeSet::new();
    for (name, len) in &sizes {
        picked.insert((name.clone(), rng.random_range(0..*len)));
    }
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let target = cfg.coords.min(total);
    while picked.len() < target {
        let (name, len) = &sizes[rng.random_range(0..sizes.len())];
        picked.insert((name.clone(), rng.random_range(0..*len)));
    }

    let mut checks = Vec::with_capacity(picked.len());
    let mut probe = params.clone();
    for (name, index) in picked {
        let x0 = params.coord(&name, index);
        *probe.coord_mut(&name, index) = x0 + cfg.step;
        let up = problem.loss(&probe, None)?;
        *probe.coord_mut(&name, index) = x0 - cfg.step;
        let down = problem.loss(&probe, None)?;
        *probe.coord_mut(&name, index) = x0;
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = analytic.coord(&name, index);
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        checks.push(CoordCheck {
            name,
            index,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(GradcheckReport {
        checks,
        tolerance: cfg.tolerance,
    })
}
