//! Per-sample masked-reconstruction loss and its gradient.

use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::encoder::reconstruct_backward;
use crate::model::{masked_mse_grad, reconstruct, Encoder, ParameterSet};
use crate::patching::{draw_mask, to_patches, with_mask, MaskToken, PatchGrid};
use crate::util::derive_seed;

/// Redraws allowed when a Bernoulli draw masks nothing.
const MAX_REDRAWS: u64 = 64;

/// Patch `sample` and mask it with a draw seeded by `seed`. A draw without
/// any masked patch is replaced by the next derived draw.
pub fn masked_grid(encoder: &Encoder, params: &ParameterSet, sample: ArrayView2<f64>, ratio: f64, seed: u64) -> Result<PatchGrid> {
    let cfg = encoder.config();
    let grid = to_patches(sample, cfg.patch_len)?;
    let (c, n) = (grid.channels(), grid.seq_len());
    let (kind, token) = if cfg.learnable_mask_token {
        (MaskToken::Learnable, Some(params.v1("mask_token")))
    } else {
        (MaskToken::FullZero, None)
    };
    for attempt in 0..MAX_REDRAWS {
        let mask = draw_mask(c, n, ratio, derive_seed(seed, &[attempt]));
        if mask.iter().any(|&m| m == 1) {
            return with_mask(&grid, mask, kind, token);
        }
    }
    Err(Error::Invalid(format!(
        "mask ratio {ratio} selected no patch of a ({c}, {n}) grid in {MAX_REDRAWS} draws"
    )))
}

/// Masked MSE of the reconstruction of `grid`, with parameter gradients when
/// `want_grad`. Dropout is active only when `rng` is given.
pub fn reconstruction_loss(
    encoder: &Encoder,
    params: &ParameterSet,
    grid: &PatchGrid,
    rng: Option<&mut ChaCha8Rng>,
    want_grad: bool,
) -> Result<(f64, Option<ParameterSet>)> {
    let (repr, cache) = encoder.forward(grid, params, rng)?;
    let pred = reconstruct(&repr, params);
    let (loss, dpred) = masked_mse_grad(&pred, grid.targets(), &grid.mask)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { name: "loss".into() });
    }
    if !want_grad {
        return Ok((loss, None));
    }
    let mut grads = params.zeros_like();
    let d_repr = reconstruct_backward(&repr, params, dpred.view(), &mut grads);
    encoder.backward(&cache, grid, params, d_repr.view(), &mut grads);
    Ok((loss, Some(grads)))
}
