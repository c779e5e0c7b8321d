//! Striped scaled dot-product attention with per-head QK normalisation.
//!
//! Tokens are rows `i*n + j` of a `[C*n, width]` matrix. A spatial stripe is
//! all channels at one time index, a temporal stripe all time indices of one
//! channel.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::config::{AttnAxis, HeadGroup};
use super::ops::{self, NormCache};
use super::params::ParameterSet;

/// Token index sets that attend to each other.
pub fn stripes(grid: (usize, usize), axis: AttnAxis) -> Vec<Vec<usize>> {
    let (c, n) = grid;
    match axis {
        AttnAxis::Spatial => (0..n).map(|j| (0..c).map(|i| i * n + j).collect()).collect(),
        AttnAxis::Temporal => (0..c).map(|i| (0..n).map(|j| i * n + j).collect()).collect(),
        AttnAxis::Full => vec![(0..c * n).collect()],
    }
}

/// Projections of one head: weights `[width, d_k]`, norm scales `[d_k]`.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams<'a> {
    pub wq: ArrayView2<'a, f64>,
    pub bq: ArrayView1<'a, f64>,
    pub wk: ArrayView2<'a, f64>,
    pub bk: ArrayView1<'a, f64>,
    pub wv: ArrayView2<'a, f64>,
    pub bv: ArrayView1<'a, f64>,
    pub q_norm: ArrayView1<'a, f64>,
    pub k_norm: ArrayView1<'a, f64>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    qn: NormCache,
    kn: NormCache,
    v: Array2<f64>,
    /// Softmax weights per stripe, in [`stripes`] order.
    pub probs: Vec<Array2<f64>>,
}

fn normed(x: ArrayView2<f64>, scale: ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let cache = ops::normalize_rows(x);
    (&cache.xhat * &scale, cache)
}

/// Attention of one head given its projected `q, k, v` (`[N, d_k]` each).
fn head_core(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: Array2<f64>,
    q_norm: ArrayView1<f64>,
    k_norm: ArrayView1<f64>,
    stripes: &[Vec<usize>],
) -> (Array2<f64>, HeadCache) {
    let dk = q.ncols();
    let inv = 1.0 / (dk as f64).sqrt();
    let (qh, qn) = normed(q, q_norm);
    let (kh, kn) = normed(k, k_norm);
    let mut out = Array2::zeros((q.nrows(), dk));
    let mut probs = Vec::with_capacity(stripes.len());
    for idx in stripes {
        let qs = qh.select(Axis(0), idx);
        let ks = kh.select(Axis(0), idx);
        let vs = v.select(Axis(0), idx);
        let p = ops::softmax_rows(qs.dot(&ks.t()) * inv);
        let o = p.dot(&vs);
        for (r, &tok) in idx.iter().enumerate() {
            out.row_mut(tok).assign(&o.row(r));
        }
        probs.push(p);
    }
    (out, HeadCache { qn, kn, v, probs })
}

struct HeadGrads {
    dq: Array2<f64>,
    dk: Array2<f64>,
    dv: Array2<f64>,
    dq_norm: Array1<f64>,
    dk_norm: Array1<f64>,
}

fn head_core_backward(
    cache: &HeadCache,
    q_norm: ArrayView1<f64>,
    k_norm: ArrayView1<f64>,
    stripes: &[Vec<usize>],
    dout: ArrayView2<f64>,
) -> HeadGrads {
    let (rows, dk) = dout.dim();
    let inv = 1.0 / (dk as f64).sqrt();
    let qh = &cache.qn.xhat * &q_norm;
    let kh = &cache.kn.xhat * &k_norm;
    let mut dqh = Array2::zeros((rows, dk));
    let mut dkh = Array2::zeros((rows, dk));
    let mut dv = Array2::zeros((rows, dk));
    for (idx, p) in stripes.iter().zip(&cache.probs) {
        let dos = dout.select(Axis(0), idx);
        let vs = cache.v.select(Axis(0), idx);
        let qs = qh.select(Axis(0), idx);
        let ks = kh.select(Axis(0), idx);
        let dp = dos.dot(&vs.t());
        let dvs = p.t().dot(&dos);
        let ds = ops::softmax_rows_backward(p.view(), dp.view()) * inv;
        let dqs = ds.dot(&ks);
        let dks = ds.t().dot(&qs);
        for (r, &tok) in idx.iter().enumerate() {
            dqh.row_mut(tok).assign(&dqs.row(r));
            dkh.row_mut(tok).assign(&dks.row(r));
            dv.row_mut(tok).assign(&dvs.row(r));
        }
    }
    let dq_norm = (&dqh * &cache.qn.xhat).sum_axis(Axis(0));
    let dk_norm = (&dkh * &cache.kn.xhat).sum_axis(Axis(0));
    let dq = ops::normalize_rows_backward(&cache.qn, (dqh * q_norm).view());
    let dk = ops::normalize_rows_backward(&cache.kn, (dkh * k_norm).view());
    HeadGrads {
        dq,
        dk,
        dv,
        dq_norm,
        dk_norm,
    }
}

/// One head over rows of `x: [C*n, width]`.
pub fn head_forward(
    x: ArrayView2<f64>,
    grid: (usize, usize),
    axis: AttnAxis,
    head: &HeadParams,
) -> (Array2<f64>, HeadCache) {
    let q = ops::linear(x, head.wq, head.bq);
    let k = ops::linear(x, head.wk, head.bk);
    let v = ops::linear(x, head.wv, head.bv);
    head_core(q.view(), k.view(), v, head.q_norm, head.k_norm, &stripes(grid, axis))
}

fn grid_rows(x: ArrayView3<f64>) -> ((usize, usize), Array2<f64>) {
    let (c, n, w) = x.dim();
    ((c, n), x.to_shape((c * n, w)).expect("contiguous").to_owned())
}

fn grid_attention(x: ArrayView3<f64>, head: &HeadParams, axis: AttnAxis) -> Array3<f64> {
    let (grid, rows) = grid_rows(x);
    let (out, _) = head_forward(rows.view(), grid, axis, head);
    let dk = out.ncols();
    out.into_shape_with_order((grid.0, grid.1, dk)).expect("shape")
}

/// Attention across channels, independently at every time index.
pub fn s_attention(x: ArrayView3<f64>, head: &HeadParams) -> Array3<f64> {
    grid_attention(x, head, AttnAxis::Spatial)
}

/// Attention across time, independently within every channel.
pub fn t_attention(x: ArrayView3<f64>, head: &HeadParams) -> Array3<f64> {
    grid_attention(x, head, AttnAxis::Temporal)
}

/// Attention over every token of the grid.
pub fn full_attention(x: ArrayView3<f64>, head: &HeadParams) -> Array3<f64> {
    grid_attention(x, head, AttnAxis::Full)
}

// ---------------------------------------------------------------------------
// Head groups backed by a parameter set

fn gname(prefix: &str, g: usize, what: &str) -> String {
    format!("{prefix}.g{g}.{what}")
}

/// Parameters of head `h` within group `g` (column slices of the group projections).
pub fn head_params<'a>(params: &'a ParameterSet, prefix: &str, g: usize, h: usize, dk: usize) -> HeadParams<'a> {
    let cols = s![.., h * dk..(h + 1) * dk];
    let bias = s![h * dk..(h + 1) * dk];
    HeadParams {
        wq: params.v2(&gname(prefix, g, "wq")).slice_move(cols),
        bq: params.v1(&gname(prefix, g, "bq")).slice_move(bias),
        wk: params.v2(&gname(prefix, g, "wk")).slice_move(cols),
        bk: params.v1(&gname(prefix, g, "bk")).slice_move(bias),
        wv: params.v2(&gname(prefix, g, "wv")).slice_move(cols),
        bv: params.v1(&gname(prefix, g, "bv")).slice_move(bias),
        q_norm: params.v2(&gname(prefix, g, "q_norm")).index_axis_move(Axis(0), h),
        k_norm: params.v2(&gname(prefix, g, "k_norm")).index_axis_move(Axis(0), h),
    }
}

#[derive(Debug, Clone)]
pub struct GroupCache {
    x: Array2<f64>,
    heads: Vec<HeadCache>,
}

impl GroupCache {
    pub fn heads(&self) -> &[HeadCache] {
        &self.heads
    }
}

/// Runs group `g` of `prefix` on its input slice `x: [N, width]`.
pub fn group_forward(
    x: ArrayView2<f64>,
    grid: (usize, usize),
    group: &HeadGroup,
    g: usize,
    prefix: &str,
    params: &ParameterSet,
    dk: usize,
) -> (Array2<f64>, GroupCache) {
    let q = ops::linear(x, params.v2(&gname(prefix, g, "wq")), params.v1(&gname(prefix, g, "bq")));
    let k = ops::linear(x, params.v2(&gname(prefix, g, "wk")), params.v1(&gname(prefix, g, "bk")));
    let v = ops::linear(x, params.v2(&gname(prefix, g, "wv")), params.v1(&gname(prefix, g, "bv")));
    let qn = params.v2(&gname(prefix, g, "q_norm"));
    let kn = params.v2(&gname(prefix, g, "k_norm"));
    let idx = stripes(grid, group.axis);
    let mut out = Array2::zeros((x.nrows(), group.width));
    let mut heads = Vec::with_capacity(group.heads);
    for h in 0..group.heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let (o, cache) = head_core(
            q.slice(cols),
            k.slice(cols),
            v.slice(cols).to_owned(),
            qn.row(h),
            kn.row(h),
            &idx,
        );
        out.slice_mut(cols).assign(&o);
        heads.push(cache);
    }
    (
        out,
        GroupCache {
            x: x.to_owned(),
            heads,
        },
    )
}

/// Returns the gradient on the group's input slice.
#[allow(clippy::too_many_arguments)]
pub fn group_backward(
    cache: &GroupCache,
    grid: (usize, usize),
    group: &HeadGroup,
    g: usize,
    prefix: &str,
    params: &ParameterSet,
    dk: usize,
    dout: ArrayView2<f64>,
    grads: &mut ParameterSet,
) -> Array2<f64> {
    let rows = dout.nrows();
    let idx = stripes(grid, group.axis);
    let qn = params.v2(&gname(prefix, g, "q_norm"));
    let kn = params.v2(&gname(prefix, g, "k_norm"));
    let mut dq = Array2::zeros((rows, group.width));
    let mut dkm = Array2::zeros((rows, group.width));
    let mut dv = Array2::zeros((rows, group.width));
    let mut dqn = Array2::zeros((group.heads, dk));
    let mut dkn = Array2::zeros((group.heads, dk));
    for (h, hc) in cache.heads.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let hg = head_core_backward(hc, qn.row(h), kn.row(h), &idx, dout.slice(cols));
        dq.slice_mut(cols).assign(&hg.dq);
        dkm.slice_mut(cols).assign(&hg.dk);
        dv.slice_mut(cols).assign(&hg.dv);
        dqn.row_mut(h).assign(&hg.dq_norm);
        dkn.row_mut(h).assign(&hg.dk_norm);
    }
    grads.accumulate(&gname(prefix, g, "q_norm"), &dqn.into_dyn());
    grads.accumulate(&gname(prefix, g, "k_norm"), &dkn.into_dyn());
    let mut dx = Array2::zeros((rows, group.width));
    for (dy, w, b) in [(&dq, "wq", "bq"), (&dkm, "wk", "bk"), (&dv, "wv", "bv")] {
        let (d_in, dw, db) = ops::linear_backward(cache.x.view(), params.v2(&gname(prefix, g, w)), dy.view());
        grads.accumulate(&gname(prefix, g, w), &dw.into_dyn());
        grads.accumulate(&gname(prefix, g, b), &db.into_dyn());
        dx += &d_in;
    }
    dx
}
