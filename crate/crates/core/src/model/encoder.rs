//! Full encoder: patch embedding, positional encoding, transformer stack,
//! and the reconstruction head.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;

use super::block::{self, BlockCache};
use super::config::ModelConfig;
use super::ops;
use super::params::ParameterSet;
use super::patch_encoder::{self, PatchCache};
use super::pos_encoding;
use super::spectrum::EnergyPlan;
use crate::error::{ensure, Error, Result};
use crate::patching::PatchGrid;

/// Named point in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Patch embeddings `E`.
    Embedded,
    /// After positional encoding.
    Positioned,
    /// Transformer output `E^r`.
    Output,
}

/// Token embeddings `[C*n, d]`, row `i*n + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub stage: Stage,
    pub grid: (usize, usize),
    pub tokens: Array2<f64>,
}

impl Activation {
    /// `[C, n, d]` view of the tokens.
    pub fn to_grid(&self) -> Array3<f64> {
        let d = self.tokens.ncols();
        self.tokens
            .to_shape((self.grid.0, self.grid.1, d))
            .expect("standard layout")
            .to_owned()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    grid: (usize, usize),
    patch: PatchCache,
    embedded: Array2<f64>,
    blocks: Vec<BlockCache>,
}

impl EncoderCache {
    pub fn blocks(&self) -> &[BlockCache] {
        &self.blocks
    }
}

/// Configuration plus the FFT plan it needs.
pub struct Encoder {
    cfg: ModelConfig,
    plan: EnergyPlan,
}

impl Encoder {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = EnergyPlan::new(cfg.patch_len, cfg.energy);
        Ok(Self { cfg, plan })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &EnergyPlan {
        &self.plan
    }

    /// `E` for the (possibly masked) patches.
    pub fn embed(&self, patches: ArrayView3<f64>, params: &ParameterSet) -> Result<Activation> {
        let (c, n, _) = patches.dim();
        let (tokens, _) = patch_encoder::patch_forward(patches, params, &self.cfg, &self.plan)?;
        Ok(Activation {
            stage: Stage::Embedded,
            grid: (c, n),
            tokens,
        })
    }

    pub fn position(&self, e: &Activation, params: &ParameterSet) -> Result<Activation> {
        Ok(Activation {
            stage: Stage::Positioned,
            grid: e.grid,
            tokens: pos_encoding::pe_forward(e.tokens.view(), e.grid, params, &self.cfg)?,
        })
    }

    /// Forward to `E^r`. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        grid: &PatchGrid,
        params: &ParameterSet,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Activation, EncoderCache)> {
        let (c, n, _) = grid.patches.dim();
        ensure!(c >= 1 && n >= 1, Shape, "empty patch grid ({c}, {n})");
        let (embedded, patch) = patch_encoder::patch_forward(grid.patches.view(), params, &self.cfg, &self.plan)?;
        let mut x = pos_encoding::pe_forward(embedded.view(), (c, n), params, &self.cfg)?;
        let mut blocks = Vec::with_capacity(self.cfg.n_layers);
        for layer in 0..self.cfg.n_layers {
            let (y, cache) = block::block_forward(x.view(), (c, n), layer, params, &self.cfg, rng.as_deref_mut());
            x = y;
            blocks.push(cache);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: "encoder output".into(),
            });
        }
        Ok((
            Activation {
                stage: Stage::Output,
                grid: (c, n),
                tokens: x,
            },
            EncoderCache {
                grid: (c, n),
                patch,
                embedded,
                blocks,
            },
        ))
    }

    /// Backpropagate `d_out` (gradient on `E^r`). When the config uses a
    /// learnable mask token, its gradient is gathered from the masked patches
    /// of `grid`.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        grid: &PatchGrid,
        params: &ParameterSet,
        d_out: ArrayView2<f64>,
        grads: &mut ParameterSet,
    ) {
        let mut dx = d_out.to_owned();
        for layer in (0..self.cfg.n_layers).rev() {
            dx = block::block_backward(&cache.blocks[layer], cache.grid, layer, params, &self.cfg, dx.view(), grads);
        }
        let de = pos_encoding::pe_backward(cache.embedded.view(), cache.grid, params, &self.cfg, dx.view(), grads);
        let masked: Vec<usize> = grid
            .mask
            .iter()
            .enumerate()
            .filter_map(|(r, &m)| (m == 1).then_some(r))
            .collect();
        let want_token = self.cfg.learnable_mask_token && grads.contains("mask_token") && !masked.is_empty();
        let input = patch_encoder::patch_backward(&cache.patch, params, &self.cfg, de.view(), grads, want_token);
        if let Some(input) = input {
            let time = input.time.select(Axis(0), &masked).sum_axis(Axis(0));
            let energy = input.energy.select(Axis(0), &masked).sum_axis(Axis(0));
            let token = params.v1("mask_token");
            let total = time + self.plan.energy_vjp(token, energy.view());
            grads.accumulate("mask_token", &total.into_dyn());
        }
    }
}

/// Per-patch linear map `d -> t`; returns `[C, n, t]`.
pub fn reconstruct(repr: &Activation, params: &ParameterSet) -> Array3<f64> {
    let (c, n) = repr.grid;
    let y = ops::linear(repr.tokens.view(), params.v2("recon.weight"), params.v1("recon.bias"));
    let t = y.ncols();
    y.into_shape_with_order((c, n, t)).expect("shape")
}

/// Gradient of the reconstruction head; returns the gradient on `E^r`.
pub fn reconstruct_backward(repr: &Activation, params: &ParameterSet, d_recon: ArrayView3<f64>, grads: &mut ParameterSet) -> Array2<f64> {
    let (c, n, t) = d_recon.dim();
    let dy = d_recon.to_shape((c * n, t)).expect("contiguous");
    let (dx, dw, db) = ops::linear_backward(repr.tokens.view(), params.v2("recon.weight"), dy.view());
    grads.accumulate("recon.weight", &dw.into_dyn());
    grads.accumulate("recon.bias", &db.into_dyn());
    dx
}

fn check_mse_inputs(pred: &Array3<f64>, target: &Array3<f64>, mask: &Array2<u8>) -> Result<usize> {
    ensure!(pred.dim() == target.dim(), Shape, "prediction {:?} vs target {:?}", pred.dim(), target.dim());
    let (c, n, _) = pred.dim();
    ensure!(mask.dim() == (c, n), Shape, "mask {:?} vs grid ({c}, {n})", mask.dim());
    let masked = mask.iter().filter(|&&m| m == 1).count();
    ensure!(masked > 0, Invalid, "masked MSE undefined: no masked patches");
    Ok(masked)
}

/// Mean squared error over masked patches only.
pub fn masked_mse(pred: &Array3<f64>, target: &Array3<f64>, mask: &Array2<u8>) -> Result<f64> {
    let masked = check_mse_inputs(pred, target, mask)?;
    let t = pred.dim().2;
    let mut sum = 0.0;
    for ((i, j), _) in mask.indexed_iter().filter(|(_, &m)| m == 1) {
        for k in 0..t {
            sum += (pred[[i, j, k]] - target[[i, j, k]]).powi(2);
        }
    }
    Ok(sum / (masked * t) as f64)
}

/// `(loss, dloss/dpred)`.
pub fn masked_mse_grad(pred: &Array3<f64>, target: &Array3<f64>, mask: &Array2<u8>) -> Result<(f64, Array3<f64>)> {
    let loss = masked_mse(pred, target, mask)?;
    let masked = check_mse_inputs(pred, target, mask)?;
    let scale = 2.0 / (masked * pred.dim().2) as f64;
    let mut grad = Array3::zeros(pred.raw_dim());
    for ((i, j), _) in mask.indexed_iter().filter(|(_, &m)| m == 1) {
        let diff = &pred.slice(ndarray::s![i, j, ..]) - &target.slice(ndarray::s![i, j, ..]);
        grad.slice_mut(ndarray::s![i, j, ..]).assign(&(diff * scale));
    }
    Ok((loss, grad))
}

/// Flattened `E^r` (`C*n*d`), the input of task heads.
pub fn flatten(repr: &Activation) -> Array1<f64> {
    repr.tokens.iter().copied().collect()
}
