//! Per-patch embedding: a conv stack in time plus a projected FFT energy vector.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::config::ModelConfig;
use super::ops::{self, Conv1dCache, GroupNormCache};
use super::params::ParameterSet;
use super::spectrum::EnergyPlan;
use crate::error::{ensure, Result};

#[derive(Debug, Clone)]
pub struct PatchCache {
    convs: Vec<Conv1dCache>,
    norms: Vec<GroupNormCache>,
    pre_gelu: Vec<Array3<f64>>,
    energy: Array2<f64>,
}

/// Gradient with respect to the raw patch values, split by branch.
pub struct PatchInputGrad {
    /// Time branch, `[N, t]`.
    pub time: Array2<f64>,
    /// Upstream gradient on each patch's energy vector, `[N, bins]`.
    pub energy: Array2<f64>,
}

/// `patches: [C, n, t]` -> token embeddings `[C*n, d]` (row `i*n + j`).
pub fn patch_forward(
    patches: ArrayView3<f64>,
    params: &ParameterSet,
    cfg: &ModelConfig,
    plan: &EnergyPlan,
) -> Result<(Array2<f64>, PatchCache)> {
    let (c, n, t) = patches.dim();
    ensure!(
        t == cfg.patch_len,
        Shape,
        "patches have length {t}, config expects {}",
        cfg.patch_len
    );
    let rows = patches.to_shape((c * n, t)).expect("contiguous patches").to_owned();
    let mut h = rows.clone().insert_axis(Axis(1));
    let mut convs = Vec::with_capacity(cfg.conv.len());
    let mut norms = Vec::with_capacity(cfg.conv.len());
    let mut pre_gelu = Vec::with_capacity(cfg.conv.len());
    for (l, spec) in cfg.conv.iter().enumerate() {
        let (y, cc) = ops::conv1d(
            h.view(),
            params.v3(&format!("patch.conv{l}.weight")),
            params.v1(&format!("patch.conv{l}.bias")),
            spec.stride,
            spec.padding,
        );
        let (z, gc) = ops::group_norm(
            y.view(),
            cfg.gn_groups,
            params.v1(&format!("patch.gn{l}.weight")),
            params.v1(&format!("patch.gn{l}.bias")),
        );
        h = ops::gelu(&z);
        convs.push(cc);
        norms.push(gc);
        pre_gelu.push(z);
    }
    let (nn, ch, len) = h.dim();
    ensure!(ch * len == cfg.d, Shape, "time branch gives {} values, d = {}", ch * len, cfg.d);
    let time = h.into_shape_with_order((nn, cfg.d)).expect("shape");
    let energy = plan.energy_rows(rows.view());
    let freq = ops::linear(
        energy.view(),
        params.v2("patch.freq.weight"),
        params.v1("patch.freq.bias"),
    );
    Ok((
        time + freq,
        PatchCache {
            convs,
            norms,
            pre_gelu,
            energy,
        },
    ))
}

/// Accumulates parameter gradients; returns input gradients when `need_input`.
pub fn patch_backward(
    cache: &PatchCache,
    params: &ParameterSet,
    cfg: &ModelConfig,
    de: ArrayView2<f64>,
    grads: &mut ParameterSet,
    need_input: bool,
) -> Option<PatchInputGrad> {
    let w = params.v2("patch.freq.weight");
    let (d_energy, dw, db) = ops::linear_backward(cache.energy.view(), w, de);
    grads.accumulate("patch.freq.weight", &dw.into_dyn());
    grads.accumulate("patch.freq.bias", &db.into_dyn());

    let last = cfg.conv.last().expect("validated config");
    let lens = cache.pre_gelu.last().expect("conv cache").dim().2;
    let mut dh = de
        .to_owned()
        .into_shape_with_order((de.nrows(), last.out_ch, lens))
        .expect("shape");
    let mut dx = None;
    for (l, spec) in cfg.conv.iter().enumerate().rev() {
        let dz = ops::gelu_backward(&cache.pre_gelu[l], &dh);
        let gamma = params.v1(&format!("patch.gn{l}.weight"));
        let (dy, dg, dbeta) = ops::group_norm_backward(&cache.norms[l], gamma, dz.view());
        grads.accumulate(&format!("patch.gn{l}.weight"), &dg.into_dyn());
        grads.accumulate(&format!("patch.gn{l}.bias"), &dbeta.into_dyn());
        let need = l > 0 || need_input;
        let (din, dw, db) = ops::conv1d_backward(
            &cache.convs[l],
            params.v3(&format!("patch.conv{l}.weight")),
            dy.view(),
            spec.stride,
            spec.padding,
            need,
        );
        grads.accumulate(&format!("patch.conv{l}.weight"), &dw.into_dyn());
        grads.accumulate(&format!("patch.conv{l}.bias"), &db.into_dyn());
        if l > 0 {
            dh = din.expect("requested");
        } else {
            dx = din;
        }
    }
    dx.map(|dx| PatchInputGrad {
        time: dx.index_axis_move(Axis(1), 0),
        energy: d_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::EnergyKind;

    #[test]
    fn zero_patch_gives_bias_constant() {
        let cfg = ModelConfig::tiny();
        let params = ParameterSet::init(&cfg, 1).unwrap();
        let plan = EnergyPlan::new(cfg.patch_len, EnergyKind::Power);
        let patches = Array3::zeros((2, 3, cfg.patch_len));
        let (e, _) = patch_forward(patches.view(), &params, &cfg, &plan).unwrap();
        assert_eq!(e.dim(), (6, cfg.d));
        // zero input, zero biases: group norm sees a constant so every token is gelu(gn bias) = 0
        assert!(e.iter().all(|&v| v == 0.0));
        for r in 1..6 {
            assert_eq!(e.row(r), e.row(0));
        }
    }

    #[test]
    fn wrong_patch_length_rejected() {
        let cfg = ModelConfig::tiny();
        let params = ParameterSet::init(&cfg, 1).unwrap();
        let plan = EnergyPlan::new(cfg.patch_len, EnergyKind::Power);
        let patches = Array3::zeros((1, 1, cfg.patch_len + 1));
        assert!(patch_forward(patches.view(), &params, &cfg, &plan).is_err());
    }
}
