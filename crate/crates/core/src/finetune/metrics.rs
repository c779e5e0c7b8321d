//! Classification and regression metrics.

use crate::error::{ensure, Error, Result};

fn check_pair<A, B>(a: &[A], b: &[B]) -> Result<()> {
    ensure!(!a.is_empty(), Invalid, "metric over an empty prediction set");
    ensure!(a.len() == b.len(), Shape, "{} predictions for {} labels", a.len(), b.len());
    Ok(())
}

fn n_classes(preds: &[usize], labels: &[usize]) -> usize {
    preds.iter().chain(labels).max().map_or(0, |m| m + 1)
}

/// `confusion[label][pred]` counts.
pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<Vec<Vec<u64>>> {
    check_pair(preds, labels)?;
    let k = n_classes(preds, labels);
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    Ok(m)
}

/// Mean recall over classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    let m = confusion(preds, labels)?;
    let recalls: Vec<f64> = m
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Cohen's kappa from a confusion matrix `[label][pred]`.
pub fn kappa_from_confusion(m: &[Vec<u64>]) -> Result<f64> {
    let total: u64 = m.iter().flatten().sum();
    ensure!(total > 0, Invalid, "kappa of an empty confusion matrix");
    let n = total as f64;
    let k = m.len();
    let po = (0..k).map(|c| m[c][c] as f64).sum::<f64>() / n;
    let pe = (0..k)
        .map(|c| {
            let row: u64 = m[c].iter().sum();
            let col: u64 = m.iter().map(|r| r[c]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if (1.0 - pe).abs() < 1e-15 {
        return Err(Error::Numeric("kappa undefined: expected agreement is 1".into()));
    }
    Ok((po - pe) / (1.0 - pe))
}

pub fn cohen_kappa(preds: &[usize], labels: &[usize]) -> Result<f64> {
    kappa_from_confusion(&confusion(preds, labels)?)
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    let m = confusion(preds, labels)?;
    let n = labels.len() as f64;
    let mut total = 0.0;
    for c in 0..m.len() {
        let support: u64 = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = m[c][c];
        let fp: u64 = m.iter().map(|r| r[c]).sum::<u64>() - tp;
        let fnn = support - tp;
        let denom = 2 * tp + fp + fnn;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        total += f1 * support as f64 / n;
    }
    Ok(total)
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<usize> {
    check_pair(scores, labels)?;
    ensure!(scores.iter().all(|s| !s.is_nan()), Invalid, "NaN score");
    let pos = labels.iter().filter(|&&l| l).count();
    ensure!(
        pos > 0 && pos < labels.len(),
        Invalid,
        "ranking metrics need both classes present"
    );
    Ok(pos)
}

/// Area under the ROC curve via the rank-sum statistic, ties averaged.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = check_binary(scores, labels)?;
    let neg = labels.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mean_rank;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Area under the precision-recall curve by step integration
/// (average precision); tied scores form a single threshold.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = check_binary(scores, labels)? as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            seen += 1.0;
            if labels[k] {
                tp += 1.0;
            }
        }
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let (mp, mt) = (mean(preds), mean(targets));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in preds.iter().zip(targets) {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp).powi(2);
        syy += (t - mt).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("Pearson correlation undefined for constant input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn r2(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let mt = mean(targets);
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum();
    let ss_tot: f64 = targets.iter().map(|t| (t - mt).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Numeric("R2 undefined for constant targets".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    Ok((preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_hand_example() {
        let k = kappa_from_confusion(&[vec![50, 10], vec![5, 35]]).unwrap();
        // p_o = 0.85, p_e = 0.6*0.55 + 0.4*0.45 = 0.51
        assert!((k - (0.85 - 0.51) / 0.49).abs() < 1e-12);
        assert!((k - 0.6939).abs() < 1e-3);
    }

    #[test]
    fn balanced_accuracy_examples() {
        // recall 0.8 on class 0, 0.6 on class 1
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let preds = [0, 0, 0, 0, 1, 1, 1, 1, 0, 0];
        assert!((balanced_accuracy(&preds, &labels).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(balanced_accuracy(&labels, &labels).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0; 10], &labels).unwrap(), 0.5);
        assert!(balanced_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn degenerate_kappa_is_an_error() {
        assert!(cohen_kappa(&[1, 1, 1], &[1, 1, 1]).is_err());
        assert_eq!(cohen_kappa(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn perfect_scores() {
        let labels = [true, false, true, false];
        let scores = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auc_pr(&scores, &labels).unwrap(), 1.0);
        assert!(auroc(&scores, &[true; 4]).is_err());
        let y = [1.0, 2.0, 4.0];
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(
            scores in prop::collection::vec(-5.0f64..5.0, 4..40), seed in any::<u64>()
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
            prop_assume!(labels.iter().any(|&l| !l));
            let t: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&t, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn duplicating_a_class_keeps_balanced_accuracy(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40), k in 0usize..3
        ) {
            let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let mut p2 = preds.clone();
            let mut l2 = labels.clone();
            for (&p, &l) in preds.iter().zip(&labels) {
                if l == k {
                    p2.push(p);
                    l2.push(l);
                }
            }
            let a = balanced_accuracy(&preds, &labels).unwrap();
            let b = balanced_accuracy(&p2, &l2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
