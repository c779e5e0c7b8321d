//! Pre-norm transformer block: attention sub-layer then feed-forward sub-layer.

use ndarray::{s, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::attention::{self, GroupCache};
use super::config::ModelConfig;
use super::ops::{self, NormCache};
use super::params::ParameterSet;

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: NormCache,
    groups: Vec<GroupCache>,
    concat: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: NormCache,
    f_in: Array2<f64>,
    hidden: Array2<f64>,
    act: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

impl BlockCache {
    pub fn groups(&self) -> &[GroupCache] {
        &self.groups
    }
}

fn lname(layer: usize, what: &str) -> String {
    format!("layers.{layer}.{what}")
}

pub fn block_forward(
    x: ArrayView2<f64>,
    grid: (usize, usize),
    layer: usize,
    params: &ParameterSet,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, BlockCache) {
    let dk = cfg.head_dim();
    let prefix = lname(layer, "attn");
    let (a_in, ln1) = ops::layer_norm(x, params.v1(&lname(layer, "norm1.weight")), params.v1(&lname(layer, "norm1.bias")));
    let mut concat = Array2::zeros(x.raw_dim());
    let mut groups = Vec::new();
    for (g, group) in cfg.head_groups(layer).iter().enumerate() {
        let cols = s![.., group.offset..group.offset + group.width];
        let (o, cache) = attention::group_forward(a_in.slice(cols), grid, group, g, &prefix, params, dk);
        concat.slice_mut(cols).assign(&o);
        groups.push(cache);
    }
    let mut attn = ops::linear(concat.view(), params.v2(&lname(layer, "attn.wo")), params.v1(&lname(layer, "attn.bo")));
    let drop1 = ops::dropout_mask(attn.dim(), cfg.dropout, rng.as_deref_mut());
    if let Some(m) = &drop1 {
        attn *= m;
    }
    let x1 = &x + &attn;

    let (f_in, ln2) = ops::layer_norm(x1.view(), params.v1(&lname(layer, "norm2.weight")), params.v1(&lname(layer, "norm2.bias")));
    let hidden = ops::linear(f_in.view(), params.v2(&lname(layer, "ffn.w1")), params.v1(&lname(layer, "ffn.b1")));
    let act = ops::gelu(&hidden);
    let mut ffn = ops::linear(act.view(), params.v2(&lname(layer, "ffn.w2")), params.v1(&lname(layer, "ffn.b2")));
    let drop2 = ops::dropout_mask(ffn.dim(), cfg.dropout, rng);
    if let Some(m) = &drop2 {
        ffn *= m;
    }
    let out = x1 + ffn;
    (
        out,
        BlockCache {
            ln1,
            groups,
            concat,
            drop1,
            ln2,
            f_in,
            hidden,
            act,
            drop2,
        },
    )
}

pub fn block_backward(
    cache: &BlockCache,
    grid: (usize, usize),
    layer: usize,
    params: &ParameterSet,
    cfg: &ModelConfig,
    dy: ArrayView2<f64>,
    grads: &mut ParameterSet,
) -> Array2<f64> {
    let dk = cfg.head_dim();
    let prefix = lname(layer, "attn");

    // feed-forward branch
    let mut dffn = dy.to_owned();
    if let Some(m) = &cache.drop2 {
        dffn *= m;
    }
    let (dact, dw2, db2) = ops::linear_backward(cache.act.view(), params.v2(&lname(layer, "ffn.w2")), dffn.view());
    grads.accumulate(&lname(layer, "ffn.w2"), &dw2.into_dyn());
    grads.accumulate(&lname(layer, "ffn.b2"), &db2.into_dyn());
    let dhidden = ops::gelu_backward(&cache.hidden, &dact);
    let (df_in, dw1, db1) = ops::linear_backward(cache.f_in.view(), params.v2(&lname(layer, "ffn.w1")), dhidden.view());
    grads.accumulate(&lname(layer, "ffn.w1"), &dw1.into_dyn());
    grads.accumulate(&lname(layer, "ffn.b1"), &db1.into_dyn());
    let (dx1_ln, dg2, db2n) = ops::layer_norm_backward(&cache.ln2, params.v1(&lname(layer, "norm2.weight")), df_in.view());
    grads.accumulate(&lname(layer, "norm2.weight"), &dg2.into_dyn());
    grads.accumulate(&lname(layer, "norm2.bias"), &db2n.into_dyn());
    let dx1 = &dy + &dx1_ln;

    // attention branch
    let mut dattn = dx1.clone();
    if let Some(m) = &cache.drop1 {
        dattn *= m;
    }
    let (dconcat, dwo, dbo) = ops::linear_backward(cache.concat.view(), params.v2(&lname(layer, "attn.wo")), dattn.view());
    grads.accumulate(&lname(layer, "attn.wo"), &dwo.into_dyn());
    grads.accumulate(&lname(layer, "attn.bo"), &dbo.into_dyn());
    let mut da_in = Array2::zeros(dconcat.raw_dim());
    for (g, (group, gc)) in cfg.head_groups(layer).iter().zip(&cache.groups).enumerate() {
        let cols = s![.., group.offset..group.offset + group.width];
        let d = attention::group_backward(gc, grid, group, g, &prefix, params, dk, dconcat.slice(cols), grads);
        da_in.slice_mut(cols).assign(&d);
    }
    let (dx_ln, dg1, db1n) = ops::layer_norm_backward(&cache.ln1, params.v1(&lname(layer, "norm1.weight")), da_in.view());
    grads.accumulate(&lname(layer, "norm1.weight"), &dg1.into_dyn());
    grads.accumulate(&lname(layer, "norm1.bias"), &db1n.into_dyn());
    dx1 + dx_ln
}
