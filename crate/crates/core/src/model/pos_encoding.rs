//! Positional encodings over the `(C, n)` token grid.

use ndarray::{s, Array2, ArrayView2};

use super::config::{ModelConfig, PeVariant};
use super::ops;
use super::params::ParameterSet;
use crate::error::{ensure, Result};

/// `E^o = E + P(E)` for the configured variant.
pub fn pe_forward(e: ArrayView2<f64>, grid: (usize, usize), params: &ParameterSet, cfg: &ModelConfig) -> Result<Array2<f64>> {
    let (c, n) = grid;
    match cfg.pe {
        PeVariant::None => Ok(e.to_owned()),
        PeVariant::Acpe | PeVariant::Cpe => {
            let w = params.v3("pe.weight");
            let (_, kh, kw) = w.dim();
            ensure!(kh % 2 == 1 && kw % 2 == 1, Config, "positional kernel ({kh}, {kw}) must be odd");
            let p = ops::depthwise_conv2d(e, grid, w, params.v1("pe.bias"));
            Ok(p + e)
        }
        PeVariant::Ape => {
            let table = params.v3("pe.table");
            let (cm, nm, _) = table.dim();
            ensure!(
                c <= cm && n <= nm,
                Shape,
                "grid ({c}, {n}) exceeds the position table ({cm}, {nm})"
            );
            let mut out = e.to_owned();
            for i in 0..c {
                let mut rows = out.slice_mut(s![i * n..(i + 1) * n, ..]);
                rows += &table.slice(s![i, ..n, ..]);
            }
            Ok(out)
        }
    }
}

/// Returns `dE`; parameter gradients are accumulated into `grads`.
pub fn pe_backward(
    e: ArrayView2<f64>,
    grid: (usize, usize),
    params: &ParameterSet,
    cfg: &ModelConfig,
    dy: ArrayView2<f64>,
    grads: &mut ParameterSet,
) -> Array2<f64> {
    let (c, n) = grid;
    match cfg.pe {
        PeVariant::None => dy.to_owned(),
        PeVariant::Acpe | PeVariant::Cpe => {
            let (dx, dw, db) = ops::depthwise_conv2d_backward(e, grid, params.v3("pe.weight"), dy);
            grads.accumulate("pe.weight", &dw.into_dyn());
            grads.accumulate("pe.bias", &db.into_dyn());
            dx + dy
        }
        PeVariant::Ape => {
            let table = grads.get_mut("pe.table");
            for i in 0..c {
                let mut slot = table.slice_mut(s![i, ..n, ..]);
                slot += &dy.slice(s![i * n..(i + 1) * n, ..]);
            }
            dy.to_owned()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() - 0.5)
    }

    fn with_pe(pe: PeVariant) -> (ModelConfig, ParameterSet) {
        let cfg = ModelConfig { pe, ..ModelConfig::tiny() };
        let params = ParameterSet::init(&cfg, 5).unwrap();
        (cfg, params)
    }

    #[test]
    fn zero_kernels_and_tables_are_identity() {
        let e = random(12, 8, 1);
        for pe in [PeVariant::Acpe, PeVariant::Cpe, PeVariant::Ape, PeVariant::None] {
            let (cfg, mut params) = with_pe(pe);
            for name in ["pe.weight", "pe.table"] {
                if params.contains(name) {
                    params.get_mut(name).fill(0.0);
                }
            }
            assert_eq!(pe_forward(e.view(), (3, 4), &params, &cfg).unwrap(), e, "{pe}");
        }
    }

    #[test]
    fn ape_rejects_oversized_grid() {
        let (cfg, params) = with_pe(PeVariant::Ape);
        let e = random(9 * 2, 8, 2);
        assert!(pe_forward(e.view(), (9, 2), &params, &cfg).is_err());
    }

    #[test]
    fn interior_translation_equivariance() {
        let (cfg, params) = with_pe(PeVariant::Acpe);
        let (c, n, d) = (6, 10, 8);
        let e = random(c * (n + 1), d, 3);
        // grid A = columns 0..n, grid B = columns 1..n+1 of the same field
        let field = e.into_shape_with_order((c, n + 1, d)).unwrap();
        let a = field.slice(s![.., ..n, ..]).to_owned().into_shape_with_order((c * n, d)).unwrap();
        let b = field.slice(s![.., 1.., ..]).to_owned().into_shape_with_order((c * n, d)).unwrap();
        let pa = pe_forward(a.view(), (c, n), &params, &cfg).unwrap() - &a;
        let pb = pe_forward(b.view(), (c, n), &params, &cfg).unwrap() - &b;
        let half = (cfg.acpe_kernel.1 - 1) / 2;
        for i in 0..c {
            for j in half..n - half - 1 {
                for k in 0..d {
                    assert!((pb[[i * n + j, k]] - pa[[i * n + j + 1, k]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_channel_uses_centre_row_only() {
        let (cfg, params) = with_pe(PeVariant::Acpe);
        let (n, d) = (7, 8);
        let e = random(n, d, 4);
        let full = pe_forward(e.view(), (1, n), &params, &cfg).unwrap();
        let w = params.v3("pe.weight");
        let (_, kh, kw) = w.dim();
        let mut centre = Array3::zeros((d, 1, kw));
        centre.slice_mut(s![.., 0, ..]).assign(&w.slice(s![.., (kh - 1) / 2, ..]));
        let one_d = ops::depthwise_conv2d(e.view(), (1, n), centre.view(), params.v1("pe.bias")) + &e;
        assert!((full - one_d).iter().all(|v| v.abs() < 1e-12));
    }
}
