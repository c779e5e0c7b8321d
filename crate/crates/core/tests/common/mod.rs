//! Scalar-loop references shared by the integration tests. None of these
//! call into the library's numeric code.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal by Box-Muller.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

pub fn gauss_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * gauss(rng))
}

pub fn gauss_vector(len: usize, std: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || std * gauss(rng))
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn tone(freq: f64, rate: f64, len: usize, amp: f64) -> Vec<f64> {
    (0..len).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
}

/// `|DFT_k|^2 / t` for `k = 0..=t/2`.
pub fn dft_power(x: &[f64]) -> Vec<f64> {
    let t = x.len();
    (0..=t / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let th = 2.0 * PI * ((k * i) % t) as f64 / t as f64;
                re += v * th.cos();
                im -= v * th.sin();
            }
            (re * re + im * im) / t as f64
        })
        .collect()
}

/// Amplitude of the sinusoid at `freq` in `x` (single-bin correlation).
pub fn amplitude_at(x: &[f64], freq: f64, rate: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let th = 2.0 * PI * freq * i as f64 / rate;
        re += v * th.cos();
        im += v * th.sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

/// Frequency of the largest DFT bin (excluding DC).
pub fn peak_frequency(x: &[f64], rate: f64) -> f64 {
    let p = dft_power(x);
    let k = (1..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    k as f64 * rate / x.len() as f64
}

/// Weights of one attention head.
pub struct RefHead {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub q_norm: Array1<f64>,
    pub k_norm: Array1<f64>,
}

impl RefHead {
    pub fn random(width: usize, dk: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = 1.0 / (width as f64).sqrt();
        Self {
            wq: gauss_matrix(width, dk, w, rng),
            bq: gauss_vector(dk, 0.3, rng),
            wk: gauss_matrix(width, dk, w, rng),
            bk: gauss_vector(dk, 0.3, rng),
            wv: gauss_matrix(width, dk, w, rng),
            bv: gauss_vector(dk, 0.3, rng),
            q_norm: gauss_vector(dk, 0.5, rng).mapv(|v| 1.0 + v),
            k_norm: gauss_vector(dk, 0.5, rng).mapv(|v| 1.0 + v),
        }
    }
}

fn affine(x: ArrayView2<f64>, r: usize, w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|o| {
            let mut s = b[o];
            for i in 0..x.ncols() {
                s += x[[r, i]] * w[[i, o]];
            }
            s
        })
        .collect()
}

fn layer_norm(v: &[f64], scale: &Array1<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    v.iter().enumerate().map(|(i, x)| (x - mean) * inv * scale[i]).collect()
}

/// Attention over all `C*n` tokens (row `i*n + j`) where `allowed(a, b)`
/// decides which pairs may interact; the rest get a logit of minus infinity.
pub fn masked_attention(x: ArrayView2<f64>, head: &RefHead, allowed: impl Fn(usize, usize) -> bool) -> Array2<f64> {
    let rows = x.nrows();
    let q: Vec<Vec<f64>> = (0..rows).map(|r| layer_norm(&affine(x, r, &head.wq, &head.bq), &head.q_norm)).collect();
    let k: Vec<Vec<f64>> = (0..rows).map(|r| layer_norm(&affine(x, r, &head.wk, &head.bk), &head.k_norm)).collect();
    let v: Vec<Vec<f64>> = (0..rows).map(|r| affine(x, r, &head.wv, &head.bv)).collect();
    let dk = head.wq.ncols();
    let mut out = Array2::zeros((rows, dk));
    for a in 0..rows {
        let logits: Vec<f64> = (0..rows)
            .map(|b| {
                if allowed(a, b) {
                    (0..dk).map(|e| q[a][e] * k[b][e]).sum::<f64>() / (dk as f64).sqrt()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        for b in 0..rows {
            for e in 0..dk {
                out[[a, e]] += w[b] / z * v[b][e];
            }
        }
    }
    out
}

/// Mean squared error over patches with `mask[i][j] == 1`.
pub fn masked_mse_loop(pred: &[Vec<Vec<f64>>], target: &[Vec<Vec<f64>>], mask: &[Vec<u8>]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..mask.len() {
        for j in 0..mask[i].len() {
            if mask[i][j] == 1 {
                for k in 0..pred[i][j].len() {
                    sum += (pred[i][j][k] - target[i][j][k]).powi(2);
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

pub fn kappa_from_table(m: &[Vec<f64>]) -> f64 {
    let total: f64 = m.iter().flatten().sum();
    let k = m.len();
    let po = (0..k).map(|i| m[i][i]).sum::<f64>() / total;
    let pe = (0..k)
        .map(|i| {
            let row: f64 = m[i].iter().sum();
            let col: f64 = (0..k).map(|r| m[r][i]).sum();
            row * col
        })
        .sum::<f64>()
        / (total * total);
    (po - pe) / (1.0 - pe)
}

fn n_classes(a: &[usize], b: &[usize]) -> usize {
    a.iter().chain(b).copied().max().map_or(0, |m| m + 1)
}

/// Rows are true labels, columns predictions.
pub fn table(preds: &[usize], labels: &[usize]) -> Vec<Vec<f64>> {
    let k = n_classes(preds, labels);
    let mut m = vec![vec![0.0; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1.0;
    }
    m
}

pub fn kappa_ref(preds: &[usize], labels: &[usize]) -> f64 {
    kappa_from_table(&table(preds, labels))
}

pub fn balanced_accuracy_ref(preds: &[usize], labels: &[usize]) -> f64 {
    let m = table(preds, labels);
    let present: Vec<usize> = (0..m.len()).filter(|&c| m[c].iter().sum::<f64>() > 0.0).collect();
    present.iter().map(|&c| m[c][c] / m[c].iter().sum::<f64>()).sum::<f64>() / present.len() as f64
}

pub fn weighted_f1_ref(preds: &[usize], labels: &[usize]) -> f64 {
    let m = table(preds, labels);
    let n = labels.len() as f64;
    let mut out = 0.0;
    for c in 0..m.len() {
        let support: f64 = m[c].iter().sum();
        if support == 0.0 {
            continue;
        }
        let predicted: f64 = (0..m.len()).map(|r| m[r][c]).sum();
        let tp = m[c][c];
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (support + predicted) };
        out += support / n * f1;
    }
    out
}

/// Probability a random positive outscores a random negative (ties half).
pub fn auroc_ref(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Step-wise average precision: mean over positives of the precision at
/// the threshold equal to that positive's score.
pub fn average_precision_ref(scores: &[f64], labels: &[bool]) -> f64 {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
    let mut sum = 0.0;
    for &p in &positives {
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= scores[p]).collect();
        let tp = above.iter().filter(|&&i| labels[i]).count();
        sum += tp as f64 / above.len() as f64;
    }
    sum / positives.len() as f64
}

pub fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn r2_ref(pred: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum();
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn rmse_ref(pred: &[f64], target: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    (s / pred.len() as f64).sqrt()
}
