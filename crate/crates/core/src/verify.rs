//! Brute-force reference implementations and the oracle suite.
//!
//! Every reference here is a direct scalar loop over its definition and
//! shares no code with the production path it checks.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::finetune::metrics;
use crate::model::attention::{head_forward, head_params, HeadParams};
use crate::model::config::{AttentionVariant, AttnAxis};
use crate::model::{masked_mse, EnergyKind, ModelConfig, ParameterSet};
use crate::model::spectrum::EnergyPlan;
use crate::util::rng_for;

// ---------------------------------------------------------------------------
// References

/// `|sum_i x_i e^{-2 pi i k i / t}|^2 / t` for `k = 0..=t/2`.
pub fn naive_dft_power(x: &[f64]) -> Vec<f64> {
    let t = x.len();
    (0..=t / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let th = 2.0 * PI * (k * i) as f64 / t as f64;
                re += v * th.cos();
                im -= v * th.sin();
            }
            (re * re + im * im) / t as f64
        })
        .collect()
}

fn row_norm(v: &[f64], scale: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    v.iter().zip(scale).map(|(x, s)| (x - mean) * inv * s).collect()
}

fn project(x: ArrayView2<f64>, r: usize, w: ArrayView2<f64>, b: &[f64]) -> Vec<f64> {
    (0..w.ncols())
        .map(|o| b[o] + (0..x.ncols()).map(|i| x[[r, i]] * w[[i, o]]).sum::<f64>())
        .collect()
}

/// One head as attention over all `C*n` tokens, with logits of pairs that
/// may not interact set to minus infinity.
pub fn masked_full_attention(x: ArrayView2<f64>, grid: (usize, usize), axis: AttnAxis, head: &HeadParams) -> Array2<f64> {
    let (_, n) = grid;
    let rows = x.nrows();
    let qn: Vec<f64> = head.q_norm.to_vec();
    let kn: Vec<f64> = head.k_norm.to_vec();
    let q: Vec<Vec<f64>> = (0..rows).map(|r| row_norm(&project(x, r, head.wq, &head.bq.to_vec()), &qn)).collect();
    let k: Vec<Vec<f64>> = (0..rows).map(|r| row_norm(&project(x, r, head.wk, &head.bk.to_vec()), &kn)).collect();
    let v: Vec<Vec<f64>> = (0..rows).map(|r| project(x, r, head.wv, &head.bv.to_vec())).collect();
    let dk = q[0].len();
    let allowed = |a: usize, b: usize| match axis {
        AttnAxis::Spatial => a % n == b % n,
        AttnAxis::Temporal => a / n == b / n,
        AttnAxis::Full => true,
    };
    let mut out = Array2::zeros((rows, dk));
    for a in 0..rows {
        let logits: Vec<f64> = (0..rows)
            .map(|b| {
                if allowed(a, b) {
                    q[a].iter().zip(&k[b]).map(|(x, y)| x * y).sum::<f64>() / (dk as f64).sqrt()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for b in 0..rows {
            for c in 0..dk {
                out[[a, c]] += w[b] / z * v[b][c];
            }
        }
    }
    out
}

/// Mean of squared errors over entries of masked patches, by explicit loops.
pub fn masked_mse_loop(pred: &Array3<f64>, target: &Array3<f64>, mask: &Array2<u8>) -> f64 {
    let (c, n, t) = pred.dim();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..c {
        for j in 0..n {
            if mask[[i, j]] != 1 {
                continue;
            }
            for k in 0..t {
                let e = pred[[i, j, k]] - target[[i, j, k]];
                sum += e * e;
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Cohen's kappa from observed and chance agreement counted pair by pair.
pub fn kappa_brute(preds: &[usize], labels: &[usize]) -> f64 {
    let n = preds.len() as f64;
    let agree = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
    let mut chance = 0.0;
    for &p in preds {
        for &l in labels {
            if p == l {
                chance += 1.0;
            }
        }
    }
    chance /= n * n;
    (agree - chance) / (1.0 - chance)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counted half.
pub fn auroc_brute(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision over distinct score thresholds.
pub fn average_precision_brute(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for th in thresholds {
        let selected: Vec<bool> = scores.iter().zip(labels).filter(|(s, _)| **s >= th).map(|(_, &l)| l).collect();
        let tp = selected.iter().filter(|&&l| l).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / selected.len() as f64;
        prev_recall = recall;
    }
    ap
}

pub fn balanced_accuracy_brute(preds: &[usize], labels: &[usize]) -> f64 {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let recall = |c: usize| {
        let support = labels.iter().filter(|&&l| l == c).count() as f64;
        let hit = preds.iter().zip(labels).filter(|(&p, &l)| l == c && p == c).count() as f64;
        hit / support
    };
    classes.iter().map(|&c| recall(c)).sum::<f64>() / classes.len() as f64
}

pub fn weighted_f1_brute(preds: &[usize], labels: &[usize]) -> f64 {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let n = labels.len() as f64;
    classes
        .iter()
        .map(|&c| {
            let tp = preds.iter().zip(labels).filter(|(&p, &l)| p == c && l == c).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
            let support = labels.iter().filter(|&&l| l == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = tp / support;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            f1 * support / n
        })
        .sum()
}

pub fn pearson_brute(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

// ---------------------------------------------------------------------------
// Suite

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.deviation < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    fn push(&mut self, name: impl Into<String>, deviation: f64, tolerance: f64) {
        self.checks.push(OracleCheck {
            name: name.into(),
            // NaN must fail
            deviation: if deviation.is_nan() { f64::INFINITY } else { deviation },
            tolerance,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(OracleCheck::passed)
    }

    /// Worst deviation among checks whose name starts with `prefix`.
    pub fn worst(&self, prefix: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .map(|c| c.deviation)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {} max_dev={:.3e} tol={:.0e}",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.deviation,
                c.tolerance
            )?;
        }
        write!(f, "passed={}", self.passed())
    }
}

fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

/// Striped attention of every head of every layer against the masked
/// brute-force reference, for all variants and grid shapes given.
pub fn attention_checks(report: &mut OracleReport, d: usize, heads: usize, grids: &[(usize, usize)], seed: u64) -> Result<()> {
    let mut rng = rng_for(seed, &[11]);
    for variant in AttentionVariant::ALL {
        let mut cfg = ModelConfig {
            d,
            n_heads: heads,
            spatial_heads: heads / 2,
            temporal_heads: heads - heads / 2,
            attention: variant,
            ..ModelConfig::tiny()
        };
        // widen the conv stack so the time branch flattens to d
        let base = ModelConfig::tiny();
        let per_pos = d / base.conv_lengths()?.last().copied().unwrap_or(1);
        for (l, spec) in cfg.conv.iter_mut().enumerate() {
            spec.in_ch = if l == 0 { 1 } else { per_pos };
            spec.out_ch = per_pos;
        }
        cfg.validate()?;
        let mut params = ParameterSet::init(&cfg, seed)?;
        // non-trivial norm scales and biases
        let jitter = Normal::new(0.0, 0.3).expect("valid std");
        for (_, v) in params.iter_mut() {
            v.mapv_inplace(|x| x + jitter.sample(&mut rng));
        }
        let dk = cfg.head_dim();
        for &grid in grids {
            let x = random_matrix(grid.0 * grid.1, d, &mut rng);
            let mut worst = 0.0f64;
            for layer in 0..cfg.n_layers {
                let prefix = format!("layers.{layer}.attn");
                for (g, group) in cfg.head_groups(layer).iter().enumerate() {
                    let xs = x.slice(ndarray::s![.., group.offset..group.offset + group.width]);
                    for h in 0..group.heads {
                        let hp = head_params(&params, &prefix, g, h, dk);
                        let (fast, _) = head_forward(xs, grid, group.axis, &hp);
                        let slow = masked_full_attention(xs, grid, group.axis, &hp);
                        worst = worst.max(max_abs_diff(fast.view(), slow.view()));
                    }
                }
            }
            report.push(format!("attention.{variant}.C{}xn{}", grid.0, grid.1), worst, 1e-6);
        }
    }
    Ok(())
}

pub fn dft_checks(report: &mut OracleReport, lengths: &[usize], seed: u64) {
    let mut rng = rng_for(seed, &[12]);
    for &t in lengths {
        let x: Vec<f64> = (0..t).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let fast = EnergyPlan::new(t, EnergyKind::Power).energy(ndarray::ArrayView1::from(&x));
        let slow = naive_dft_power(&x);
        let scale = slow.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let dev = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        report.push(format!("dft.t{t}"), dev, 1e-9);
    }
}

pub fn mse_checks(report: &mut OracleReport, seed: u64) -> Result<()> {
    let mut rng = rng_for(seed, &[13]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for (c, n, t) in [(1, 1, 5), (3, 4, 16), (8, 10, 200)] {
        let pred = Array3::from_shape_simple_fn((c, n, t), || normal.sample(&mut rng));
        let target = Array3::from_shape_simple_fn((c, n, t), || normal.sample(&mut rng));
        let mut mask = Array2::from_shape_simple_fn((c, n), || u8::from(rng.random::<bool>()));
        mask[[0, 0]] = 1;
        let fast = masked_mse(&pred, &target, &mask)?;
        let slow = masked_mse_loop(&pred, &target, &mask);
        report.push(format!("masked_mse.C{c}xn{n}xt{t}"), (fast - slow).abs(), 1e-10);
    }
    Ok(())
}

pub fn metric_checks(report: &mut OracleReport, seed: u64) -> Result<()> {
    let mut rng = rng_for(seed, &[14]);
    let (mut dk, mut dauc, mut dap, mut dba, mut df1, mut dr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for trial in 0..40 {
        let n = 2 + trial % 49;
        let k = 2 + trial % 3;
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        if let Ok(v) = metrics::cohen_kappa(&preds, &labels) {
            dk = dk.max((v - kappa_brute(&preds, &labels)).abs());
        }
        dba = dba.max((metrics::balanced_accuracy(&preds, &labels)? - balanced_accuracy_brute(&preds, &labels)).abs());
        df1 = df1.max((metrics::weighted_f1(&preds, &labels)? - weighted_f1_brute(&preds, &labels)).abs());

        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 8.0).floor() / 8.0).collect();
        let pos: Vec<bool> = (0..n).map(|i| if i < 2 { i == 0 } else { rng.random::<bool>() }).collect();
        dauc = dauc.max((metrics::auroc(&scores, &pos)? - auroc_brute(&scores, &pos)).abs());
        dap = dap.max((metrics::auc_pr(&scores, &pos)? - average_precision_brute(&scores, &pos)).abs());

        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random::<f64>()).collect();
        dr = dr.max((metrics::pearson(&x, &y)? - pearson_brute(&x, &y)).abs());
    }
    report.push("metrics.cohen_kappa", dk, 1e-9);
    report.push("metrics.balanced_accuracy", dba, 1e-9);
    report.push("metrics.weighted_f1", df1, 1e-9);
    report.push("metrics.auroc", dauc, 1e-9);
    report.push("metrics.auc_pr", dap, 1e-9);
    report.push("metrics.pearson", dr, 1e-9);
    let hand = metrics::kappa_from_confusion(&[vec![50, 10], vec![5, 35]])?;
    report.push("metrics.kappa_hand", (hand - 0.6939).abs(), 1e-3);
    Ok(())
}

/// Full oracle suite, including the degenerate `C = 1` and `n = 1` grids.
pub fn run_oracles(seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    attention_checks(&mut report, 16, 2, &[(1, 4), (3, 1), (1, 1), (3, 4), (8, 10)], seed)?;
    dft_checks(&mut report, &[1, 2, 7, 16, 200], seed);
    mse_checks(&mut report, seed)?;
    metric_checks(&mut report, seed)?;
    Ok(report)
}
