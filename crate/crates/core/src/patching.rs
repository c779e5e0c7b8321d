//! Patch grids, Bernoulli masks and mask tokens.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskToken {
    #[default]
    FullZero,
    Learnable,
}

impl std::str::FromStr for MaskToken {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_zero" | "zero" => Ok(MaskToken::FullZero),
            "learnable" => Ok(MaskToken::Learnable),
            _ => Err(Error::Config(format!("unknown mask token `{s}`"))),
        }
    }
}

impl std::fmt::Display for MaskToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskToken::FullZero => "full_zero",
            MaskToken::Learnable => "learnable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub ratio: f64,
    pub token: MaskToken,
    pub rng_seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            token: MaskToken::FullZero,
            rng_seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.ratio),
            Config,
            "mask ratio {} outside [0, 1]",
            self.ratio
        );
        Ok(())
    }
}

/// `C x n` grid of length-`t` patches with a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    /// Model input, `[C, n, t]`; masked patches hold the mask token.
    pub patches: Array3<f64>,
    /// 1 where the patch was replaced.
    pub mask: Array2<u8>,
    /// Unmasked patches, kept once a mask has been applied.
    pub originals: Option<Array3<f64>>,
}

impl PatchGrid {
    pub fn channels(&self) -> usize {
        self.patches.dim().0
    }

    pub fn seq_len(&self) -> usize {
        self.patches.dim().1
    }

    pub fn patch_len(&self) -> usize {
        self.patches.dim().2
    }

    /// Pre-mask patches: `originals` when masked, otherwise `patches`.
    pub fn targets(&self) -> &Array3<f64> {
        self.originals.as_ref().unwrap_or(&self.patches)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Concatenate the patches of each channel back into `[C, n*t]`.
    pub fn reassemble(&self) -> Array2<f64> {
        let (c, n, t) = self.patches.dim();
        self.targets()
            .to_shape((c, n * t))
            .expect("standard layout")
            .to_owned()
    }
}

/// Split a `[C, T]` sample into `floor(T/t)` patches per channel.
pub fn to_patches(sample: ArrayView2<f64>, t: usize) -> Result<PatchGrid> {
    let (c, total) = sample.dim();
    ensure!(t >= 1, Invalid, "patch length must be >= 1");
    ensure!(total >= t, Shape, "sample of {total} points shorter than patch length {t}");
    let n = total / t;
    let patches = sample
        .slice(s![.., ..n * t])
        .to_owned()
        .into_shape_with_order((c, n, t))
        .expect("contiguous slice");
    Ok(PatchGrid {
        patches,
        mask: Array2::zeros((c, n)),
        originals: None,
    })
}

/// Independent Bernoulli(`ratio`) draw per patch, in row-major grid order.
pub fn draw_mask(channels: usize, seq_len: usize, ratio: f64, seed: u64) -> Array2<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((channels, seq_len), || u8::from(rng.random::<f64>() < ratio))
}

/// Replace masked patches by the token (all zeros, or `token` for the
/// learnable kind). Originals are retained for the reconstruction loss.
pub fn apply_mask(grid: &PatchGrid, spec: &MaskSpec, token: Option<ArrayView1<f64>>) -> Result<PatchGrid> {
    spec.validate()?;
    let (c, n, _) = grid.patches.dim();
    let mask = draw_mask(c, n, spec.ratio, spec.rng_seed);
    with_mask(grid, mask, spec.token, token)
}

/// Apply an explicit mask.
pub fn with_mask(
    grid: &PatchGrid,
    mask: Array2<u8>,
    kind: MaskToken,
    token: Option<ArrayView1<f64>>,
) -> Result<PatchGrid> {
    let (c, n, t) = grid.patches.dim();
    ensure!(mask.dim() == (c, n), Shape, "mask {:?} does not match grid ({c}, {n})", mask.dim());
    let originals = grid.targets().clone();
    let token_row = match (kind, token) {
        (MaskToken::FullZero, _) => ndarray::Array1::zeros(t),
        (MaskToken::Learnable, Some(tok)) => {
            ensure!(tok.len() == t, Shape, "mask token has length {}, patches {t}", tok.len());
            tok.to_owned()
        }
        (MaskToken::Learnable, None) => {
            return Err(Error::Invalid("learnable mask token requested but not supplied".into()))
        }
    };
    let mut patches = originals.clone();
    for ((i, j), &m) in mask.indexed_iter() {
        if m == 1 {
            patches.slice_mut(s![i, j, ..]).assign(&token_row);
        }
    }
    Ok(PatchGrid {
        patches,
        mask,
        originals: Some(originals),
    })
}

/// `(channel, time)` index of a patch.
pub type GridPos = (usize, usize);

/// `(masked, unmasked)` grid positions in row-major order.
pub fn masked_index_sets(grid: &PatchGrid) -> (Vec<GridPos>, Vec<GridPos>) {
    grid.mask.indexed_iter().fold((vec![], vec![]), |(mut m, mut u), (pos, &v)| {
        if v == 1 {
            m.push(pos);
        } else {
            u.push(pos);
        }
        (m, u)
    })
}
