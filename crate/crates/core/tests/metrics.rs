mod common;

use ndarray::Array1;
use proptest::prelude::*;

use crossbrain::finetune::metrics::{auc_pr, auroc, balanced_accuracy, cohen_kappa, kappa_from_confusion, pearson, r2, rmse, weighted_f1};
use crossbrain::finetune::{output_scores, task_loss, TaskKind, TaskSpec};

use common::*;

fn classes(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (k..=50).prop_flat_map(move |n| {
        (
            proptest::collection::vec(0..k, n),
            proptest::collection::vec(0..k, n),
        )
    })
}

fn binary() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=50).prop_flat_map(|n| {
        (
            proptest::collection::vec(0u8..6, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            proptest::collection::vec(any::<bool>(), n - 2).prop_map(|mut v| {
                v.push(true);
                v.push(false);
                v
            }),
        )
    })
}

#[test]
fn kappa_hand_example() {
    let m = vec![vec![50, 10], vec![5, 35]];
    let k = kappa_from_confusion(&m).unwrap();
    assert!((k - 0.6939).abs() < 1e-3, "{k}");
    assert!((k - kappa_from_table(&[vec![50.0, 10.0], vec![5.0, 35.0]])).abs() < 1e-12);
}

#[test]
fn perfect_and_degenerate_inputs() {
    let y = [0, 1, 2, 1, 0];
    assert_eq!(balanced_accuracy(&y, &y).unwrap(), 1.0);
    assert_eq!(cohen_kappa(&y, &y).unwrap(), 1.0);
    assert_eq!(weighted_f1(&y, &y).unwrap(), 1.0);
    assert!(balanced_accuracy(&[], &[]).is_err());
    assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    assert!(r2(&[1.0, 2.0], &[3.0, 3.0]).is_err());
}

#[test]
fn smoothing_keeps_argmax_and_uniform_loss_is_ln_k() {
    let logits = Array1::from(vec![0.3, 2.0, -1.0, 0.5, 0.0]);
    let plain = TaskSpec {
        label_smoothing: 0.0,
        ..TaskSpec::new(TaskKind::Multiclass(5))
    };
    let smooth = TaskSpec::new(TaskKind::Multiclass(5));
    let (l0, _) = task_loss(&plain, logits.view(), 1.0).unwrap();
    let (l1, _) = task_loss(&smooth, logits.view(), 1.0).unwrap();
    assert!(l0 != l1);
    let p = output_scores(TaskKind::Multiclass(5), logits.view());
    let argmax = (0..5).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    assert_eq!(argmax, 1);
    let (uniform, _) = task_loss(&smooth, Array1::zeros(5).view(), 3.0).unwrap();
    assert!((uniform - 5f64.ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn class_metrics_match_brute_force((preds, labels) in classes(4)) {
        prop_assert!((balanced_accuracy(&preds, &labels).unwrap() - balanced_accuracy_ref(&preds, &labels)).abs() < 1e-9);
        prop_assert!((weighted_f1(&preds, &labels).unwrap() - weighted_f1_ref(&preds, &labels)).abs() < 1e-9);
        if let Ok(k) = cohen_kappa(&preds, &labels) {
            prop_assert!((k - kappa_ref(&preds, &labels)).abs() < 1e-9);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&k));
        }
    }

    #[test]
    fn ranking_metrics_match_brute_force((scores, labels) in binary()) {
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - auroc_ref(&scores, &labels)).abs() < 1e-9);
        prop_assert!((auc_pr(&scores, &labels).unwrap() - average_precision_ref(&scores, &labels)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auroc_invariant_under_monotone_transform((scores, labels) in binary(), shift in -3.0f64..3.0) {
        let moved: Vec<f64> = scores.iter().map(|s| (s + shift).exp() * 2.0 - 1.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&moved, &labels).unwrap());
    }

    #[test]
    fn duplicating_one_class_keeps_balanced_accuracy((preds, labels) in classes(3), k in 0usize..3) {
        let (mut p2, mut l2) = (preds.clone(), labels.clone());
        for (p, l) in preds.iter().zip(&labels) {
            if *l == k {
                p2.push(*p);
                l2.push(*l);
            }
        }
        let a = balanced_accuracy(&preds, &labels).unwrap();
        let b = balanced_accuracy(&p2, &l2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn regression_metrics_match_brute_force(x in proptest::collection::vec(-5.0f64..5.0, 3..50), noise in proptest::collection::vec(-1.0f64..1.0, 50)) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| 0.5 * a + b).collect();
        if let Ok(p) = pearson(&x, &y) {
            prop_assert!((p - pearson_ref(&x, &y)).abs() < 1e-9);
        }
        if let Ok(v) = r2(&x, &y) {
            prop_assert!((v - r2_ref(&x, &y)).abs() < 1e-9);
        }
        prop_assert!((rmse(&x, &y).unwrap() - rmse_ref(&x, &y)).abs() < 1e-9);
    }
}
