//! Named parameter tensors, their shapes and deterministic initialisation.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, Ix3, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, PeVariant};
use crate::error::{Error, Result};

/// Prefix of task-head tensors; they are excluded from the encoder count.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
    Normal { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> TensorSpec {
    TensorSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn linear_specs(out: &mut Vec<TensorSpec>, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) {
    out.push(spec(format!("{prefix}.{w}"), &[fan_in, fan_out], Init::Kaiming { fan_in }));
    out.push(spec(format!("{prefix}.{b}"), &[fan_out], Init::Zeros));
}

/// Every encoder tensor (plus reconstruction head and optional mask token)
/// implied by `cfg`, in a fixed order.
pub fn encoder_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    for (l, c) in cfg.conv.iter().enumerate() {
        out.push(spec(
            format!("patch.conv{l}.weight"),
            &[c.out_ch, c.in_ch, c.kernel],
            Init::Kaiming {
                fan_in: c.in_ch * c.kernel,
            },
        ));
        out.push(spec(format!("patch.conv{l}.bias"), &[c.out_ch], Init::Zeros));
        out.push(spec(format!("patch.gn{l}.weight"), &[c.out_ch], Init::Ones));
        out.push(spec(format!("patch.gn{l}.bias"), &[c.out_ch], Init::Zeros));
    }
    linear_specs(&mut out, "patch.freq", "weight", "bias", cfg.fft_bins(), cfg.d);
    if let Some((kh, kw)) = cfg.pe_kernel() {
        out.push(spec("pe.weight", &[cfg.d, kh, kw], Init::Kaiming { fan_in: kh * kw }));
        out.push(spec("pe.bias", &[cfg.d], Init::Zeros));
    }
    if cfg.pe == PeVariant::Ape {
        out.push(spec(
            "pe.table",
            &[cfg.ape_max.0, cfg.ape_max.1, cfg.d],
            Init::Normal { std: 0.02 },
        ));
    }
    let dk = cfg.head_dim();
    for l in 0..cfg.n_layers {
        let p = format!("layers.{l}");
        out.push(spec(format!("{p}.norm1.weight"), &[cfg.d], Init::Ones));
        out.push(spec(format!("{p}.norm1.bias"), &[cfg.d], Init::Zeros));
        for (g, group) in cfg.param_groups().iter().enumerate() {
            let gp = format!("{p}.attn.g{g}");
            for proj in ["q", "k", "v"] {
                linear_specs(&mut out, &gp, &format!("w{proj}"), &format!("b{proj}"), group.width, group.width);
            }
            out.push(spec(format!("{gp}.q_norm"), &[group.heads, dk], Init::Ones));
            out.push(spec(format!("{gp}.k_norm"), &[group.heads, dk], Init::Ones));
        }
        linear_specs(&mut out, &format!("{p}.attn"), "wo", "bo", cfg.d, cfg.d);
        out.push(spec(format!("{p}.norm2.weight"), &[cfg.d], Init::Ones));
        out.push(spec(format!("{p}.norm2.bias"), &[cfg.d], Init::Zeros));
        linear_specs(&mut out, &format!("{p}.ffn"), "w1", "b1", cfg.d, cfg.ffn_dim);
        linear_specs(&mut out, &format!("{p}.ffn"), "w2", "b2", cfg.ffn_dim, cfg.d);
    }
    linear_specs(&mut out, "recon", "weight", "bias", cfg.d, cfg.patch_len);
    if cfg.learnable_mask_token {
        out.push(spec("mask_token", &[cfg.patch_len], Init::Zeros));
    }
    out
}

/// Two-layer perceptron head `in_dim -> hidden -> out_dim`.
pub fn head_specs(in_dim: usize, hidden: usize, out_dim: usize) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    linear_specs(&mut out, "head", "w1", "b1", in_dim, hidden);
    linear_specs(&mut out, "head", "w2", "b2", hidden, out_dim);
    out
}

/// Encoder parameter count (excludes the task head).
pub fn count_params(cfg: &ModelConfig) -> usize {
    encoder_specs(cfg)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// Contiguous storage of a tensor. Every tensor of a set is created in
/// standard layout and only ever mutated in place.
pub(crate) fn flat(t: &ArrayD<f64>) -> &[f64] {
    t.as_slice().expect("standard-layout tensor")
}

pub(crate) fn flat_mut(t: &mut ArrayD<f64>) -> &mut [f64] {
    t.as_slice_mut().expect("standard-layout tensor")
}

/// Named, shaped tensors. Iteration is in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[TensorSpec], seed: u64) -> Self {
        let mut set = Self::new();
        set.init_specs(specs, seed);
        set
    }

    /// Insert (or overwrite) tensors drawn from `specs` in order.
    pub fn init_specs(&mut self, specs: &[TensorSpec], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in specs {
            let shape = IxDyn(&s.shape);
            let tensor = match s.init {
                Init::Zeros => ArrayD::zeros(shape),
                Init::Ones => ArrayD::ones(shape),
                Init::Kaiming { fan_in } => {
                    let dist = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("std > 0");
                    ArrayD::from_shape_simple_fn(shape, || dist.sample(&mut rng))
                }
                Init::Normal { std } => {
                    let dist = Normal::new(0.0, std).expect("std >= 0");
                    ArrayD::from_shape_simple_fn(shape, || dist.sample(&mut rng))
                }
            };
            self.tensors.insert(s.name.clone(), tensor);
        }
    }

    /// Encoder initialised under `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::from_specs(&encoder_specs(cfg), seed))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        let tensor = if tensor.is_standard_layout() {
            tensor
        } else {
            tensor.as_standard_layout().into_owned()
        };
        self.tensors.insert(name.into(), tensor);
    }

    pub fn remove(&mut self, name: &str) -> Option<ArrayD<f64>> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing"))
    }

    pub fn try_get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing"))
    }

    pub fn v1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.get(name).view().into_dimensionality::<Ix1>().expect("rank-1 tensor")
    }

    pub fn v2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.get(name).view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
    }

    pub fn v3(&self, name: &str) -> ArrayView3<'_, f64> {
        self.get(name).view().into_dimensionality::<Ix3>().expect("rank-3 tensor")
    }

    pub fn v1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("rank-1 tensor")
    }

    pub fn v2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        self.get_mut(name)
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("rank-2 tensor")
    }

    /// `self[name] += delta` (shapes must match element count and order).
    pub fn accumulate<'a>(&mut self, name: &str, delta: impl Into<ndarray::ArrayViewD<'a, f64>>) {
        let delta = delta.into();
        let slot = self.get_mut(name);
        assert_eq!(slot.len(), delta.len(), "gradient size mismatch for `{name}`");
        match (slot.as_slice_mut(), delta.as_slice()) {
            (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(a, b)| *a += b),
            _ => slot.iter_mut().zip(delta.iter()).for_each(|(a, b)| *a += b),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total element count; `include_head = false` skips `head.*`.
    pub fn numel(&self, include_head: bool) -> usize {
        self.iter()
            .filter(|(k, _)| include_head || !k.starts_with(HEAD_PREFIX))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Global L2 norm, summed in name order.
    pub fn norm(&self) -> f64 {
        self.tensors
            .values()
            .map(|t| flat(t).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors
            .values_mut()
            .for_each(|t| flat_mut(t).iter_mut().for_each(|v| *v *= s));
    }

    /// `self += a * other` over shared names.
    pub fn axpy(&mut self, a: f64, other: &ParameterSet) {
        for (k, t) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(k) {
                assert_eq!(t.shape(), o.shape(), "axpy shape mismatch for `{k}`");
                flat_mut(t).iter_mut().zip(flat(o)).for_each(|(x, y)| *x += a * y);
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, t) in &self.tensors {
            if flat(t).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { name: k.clone() });
            }
        }
        Ok(())
    }

    /// Check presence and shape of every tensor in `specs`.
    pub fn check_specs(&self, specs: &[TensorSpec]) -> Result<()> {
        for s in specs {
            let t = self
                .try_get(&s.name)
                .ok_or_else(|| Error::Shape(format!("missing tensor `{}`", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Round every value through `f32` (storage precision).
    pub fn snap_to_f32(&mut self) {
        self.tensors
            .values_mut()
            .for_each(|t| flat_mut(t).iter_mut().for_each(|v| *v = f64::from(*v as f32)));
    }

    /// Flat coordinate access used by finite-difference checks.
    pub fn coord(&self, name: &str, index: usize) -> f64 {
        flat(self.get(name))[index]
    }

    pub fn coord_mut(&mut self, name: &str, index: usize) -> &mut f64 {
        &mut flat_mut(self.get_mut(name))[index]
    }
}
