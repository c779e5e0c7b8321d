//! Differentiable building blocks. Each forward returns what its backward needs.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const NORM_EPS: f64 = 1e-5;

/// `x @ w + b` with `w` stored `[in, out]`.
pub fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    (dy.dot(&w.t()), x.t().dot(&dy), dy.sum_axis(Axis(0)))
}

/// Row-wise normalisation statistics.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

/// Normalise each row to zero mean / unit variance (no affine).
pub fn normalize_rows(x: ArrayView2<f64>) -> NormCache {
    let (rows, cols) = x.dim();
    let mut xhat = Array2::zeros((rows, cols));
    let mut rstd = Array1::zeros(rows);
    for ((row, mut out), r) in x.outer_iter().zip(xhat.outer_iter_mut()).zip(rstd.iter_mut()) {
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        *r = 1.0 / (var + NORM_EPS).sqrt();
        Zip::from(&mut out).and(&row).for_each(|o, &v| *o = (v - mean) * *r);
    }
    NormCache { xhat, rstd }
}

/// Backward of [`normalize_rows`] given `dxhat`.
pub fn normalize_rows_backward(cache: &NormCache, dxhat: ArrayView2<f64>) -> Array2<f64> {
    let cols = dxhat.ncols() as f64;
    let mut dx = Array2::zeros(dxhat.raw_dim());
    for (((g, xh), mut out), &r) in dxhat
        .outer_iter()
        .zip(cache.xhat.outer_iter())
        .zip(dx.outer_iter_mut())
        .zip(cache.rstd.iter())
    {
        let mean_g = g.sum() / cols;
        let mean_gx = g.dot(&xh) / cols;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = r * (gi - mean_g - xi * mean_gx));
    }
    dx
}

/// Layer norm with per-feature affine.
pub fn layer_norm(x: ArrayView2<f64>, gamma: ArrayView1<f64>, beta: ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let cache = normalize_rows(x);
    let mut y = &cache.xhat * &gamma;
    y += &beta;
    (y, cache)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(
    cache: &NormCache,
    gamma: ArrayView1<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = &dy * &gamma;
    (normalize_rows_backward(cache, dxhat.view()), dgamma, dbeta)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf) GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(gelu_scalar)
}

pub fn gelu_backward<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| *d *= gelu_grad_scalar(v));
    dx
}

/// Numerically stable row softmax.
pub fn softmax_rows(mut s: Array2<f64>) -> Array2<f64> {
    for mut row in s.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    s
}

/// `dS = P * (dP - rowsum(dP * P))`.
pub fn softmax_rows_backward(p: ArrayView2<f64>, dp: ArrayView2<f64>) -> Array2<f64> {
    let mut ds = Array2::zeros(p.raw_dim());
    for ((pr, dr), mut out) in p.outer_iter().zip(dp.outer_iter()).zip(ds.outer_iter_mut()) {
        let dot = pr.dot(&dr);
        Zip::from(&mut out)
            .and(&pr)
            .and(&dr)
            .for_each(|o, &pi, &di| *o = pi * (di - dot));
    }
    ds
}

/// Inverted dropout mask (`0` or `1/(1-p)`), or `None` when inactive.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

// ---------------------------------------------------------------------------
// 1-D convolution over a batch of single patches

#[derive(Debug, Clone)]
pub struct Conv1dCache {
    /// im2col matrix `[N * L_out, C_in * K]`.
    pub cols: Array2<f64>,
    pub in_shape: (usize, usize, usize),
    pub out_len: usize,
}

fn im2col(x: ArrayView3<f64>, k: usize, stride: usize, pad: usize, out_len: usize) -> Array2<f64> {
    let (n, cin, len) = x.dim();
    let mut cols = Array2::zeros((n * out_len, cin * k));
    for b in 0..n {
        for l in 0..out_len {
            let mut row = cols.row_mut(b * out_len + l);
            for c in 0..cin {
                for kk in 0..k {
                    let pos = (l * stride + kk) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        row[c * k + kk] = x[[b, c, pos as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// `x: [N, C_in, L]`, `w: [C_out, C_in, K]` -> `[N, C_out, L_out]`.
pub fn conv1d(
    x: ArrayView3<f64>,
    w: ArrayView3<f64>,
    b: ArrayView1<f64>,
    stride: usize,
    pad: usize,
) -> (Array3<f64>, Conv1dCache) {
    let (n, _, len) = x.dim();
    let (cout, cin, k) = w.dim();
    let out_len = (len + 2 * pad - k) / stride + 1;
    let cols = im2col(x, k, stride, pad, out_len);
    let wmat = w.to_shape((cout, cin * k)).expect("contiguous weight");
    let mut y = cols.dot(&wmat.t()); // [N*L_out, C_out]
    y += &b;
    let out = y
        .into_shape_with_order((n, out_len, cout))
        .expect("shape")
        .permuted_axes([0, 2, 1])
        .as_standard_layout()
        .to_owned();
    (
        out,
        Conv1dCache {
            cols,
            in_shape: x.dim(),
            out_len,
        },
    )
}

/// Returns `(dx, dw, db)`; `dx` only when `need_dx`.
pub fn conv1d_backward(
    cache: &Conv1dCache,
    w: ArrayView3<f64>,
    dy: ArrayView3<f64>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Array3<f64>>, Array3<f64>, Array1<f64>) {
    let (n, cin, len) = cache.in_shape;
    let (cout, _, k) = w.dim();
    let out_len = cache.out_len;
    let dy2 = dy
        .permuted_axes([0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * out_len, cout))
        .expect("shape");
    let dw = dy2
        .t()
        .dot(&cache.cols)
        .into_shape_with_order((cout, cin, k))
        .expect("shape");
    let db = dy2.sum_axis(Axis(0));
    let dx = need_dx.then(|| {
        let wmat = w.to_shape((cout, cin * k)).expect("contiguous weight");
        let dcols = dy2.dot(&wmat);
        let mut dx = Array3::zeros((n, cin, len));
        for bi in 0..n {
            for l in 0..out_len {
                let row = dcols.row(bi * out_len + l);
                for c in 0..cin {
                    for kk in 0..k {
                        let pos = (l * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            dx[[bi, c, pos as usize]] += row[c * k + kk];
                        }
                    }
                }
            }
        }
        dx
    });
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Group norm over `[N, C, L]`

#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub norm: NormCache,
    pub groups: usize,
}

pub fn group_norm(
    x: ArrayView3<f64>,
    groups: usize,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array3<f64>, GroupNormCache) {
    let (n, c, l) = x.dim();
    let flat = x.to_shape((n * groups, c / groups * l)).expect("contiguous input");
    let norm = normalize_rows(flat.view());
    let mut y = norm
        .xhat
        .clone()
        .into_shape_with_order((n, c, l))
        .expect("shape");
    for (ci, mut chan) in y.axis_iter_mut(Axis(1)).enumerate() {
        chan.mapv_inplace(|v| v * gamma[ci] + beta[ci]);
    }
    (y, GroupNormCache { norm, groups })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(
    cache: &GroupNormCache,
    gamma: ArrayView1<f64>,
    dy: ArrayView3<f64>,
) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
    let (n, c, l) = dy.dim();
    let xhat = cache.norm.xhat.to_shape((n, c, l)).expect("shape");
    let dgamma = (&dy * &xhat).sum_axis(Axis(2)).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(2)).sum_axis(Axis(0));
    let mut dxhat = dy.to_owned();
    for (ci, mut chan) in dxhat.axis_iter_mut(Axis(1)).enumerate() {
        chan.mapv_inplace(|v| v * gamma[ci]);
    }
    let dxhat = dxhat
        .into_shape_with_order((n * cache.groups, c / cache.groups * l))
        .expect("shape");
    let dx = normalize_rows_backward(&cache.norm, dxhat.view())
        .into_shape_with_order((n, c, l))
        .expect("shape");
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Depthwise 2-D convolution over the `(C, n)` grid, rows are tokens `i*n + j`

/// `x: [C*n, d]`, `w: [d, kh, kw]`, zero padding `((kh-1)/2, (kw-1)/2)`.
pub fn depthwise_conv2d(
    x: ArrayView2<f64>,
    grid: (usize, usize),
    w: ArrayView3<f64>,
    b: ArrayView1<f64>,
) -> Array2<f64> {
    let (c, n) = grid;
    let (_, kh, kw) = w.dim();
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut y = Array2::zeros(x.raw_dim());
    y += &b;
    for a in 0..kh {
        for bb in 0..kw {
            let tap = w.slice(s![.., a, bb]);
            for i in 0..c {
                let si = i as isize + a as isize - ph as isize;
                if si < 0 || si >= c as isize {
                    continue;
                }
                for j in 0..n {
                    let sj = j as isize + bb as isize - pw as isize;
                    if sj < 0 || sj >= n as isize {
                        continue;
                    }
                    let src = x.row(si as usize * n + sj as usize);
                    let mut dst = y.row_mut(i * n + j);
                    Zip::from(&mut dst).and(&src).and(&tap).for_each(|o, &v, &t| *o += v * t);
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn depthwise_conv2d_backward(
    x: ArrayView2<f64>,
    grid: (usize, usize),
    w: ArrayView3<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array3<f64>, Array1<f64>) {
    let (c, n) = grid;
    let (d, kh, kw) = w.dim();
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dw = Array3::zeros((d, kh, kw));
    for a in 0..kh {
        for bb in 0..kw {
            let tap = w.slice(s![.., a, bb]);
            let mut dtap = Array1::<f64>::zeros(d);
            for i in 0..c {
                let si = i as isize + a as isize - ph as isize;
                if si < 0 || si >= c as isize {
                    continue;
                }
                for j in 0..n {
                    let sj = j as isize + bb as isize - pw as isize;
                    if sj < 0 || sj >= n as isize {
                        continue;
                    }
                    let src = si as usize * n + sj as usize;
                    let g = dy.row(i * n + j);
                    Zip::from(&mut dtap).and(&g).and(x.row(src)).for_each(|o, &gi, &xi| *o += gi * xi);
                    Zip::from(dx.row_mut(src)).and(&g).and(&tap).for_each(|o, &gi, &t| *o += gi * t);
                }
            }
            dw.slice_mut(s![.., a, bb]).assign(&dtap);
        }
    }
    (dx, dw, dy.sum_axis(Axis(0)))
}
