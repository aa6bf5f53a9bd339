use fuzztarget::metrics::{kappa, mcc, pr_curve, roc_auc, roc_curve, summary, trapezoid_area, ConfusionMatrix};
use proptest::prelude::*;

/// P(score_pos > score_neg) + 0.5 P(tie), over all positive/negative pairs.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
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

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=50).prop_flat_map(|n| {
        // Coarse scores so ties are common.
        (prop::collection::vec((0u8..20).prop_map(|v| f64::from(v) / 20.0), n), prop::collection::vec(0u8..2, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn rank_auc_equals_pairwise((scores, labels) in instance()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let auc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        let area = trapezoid_area(&roc_curve(&scores, &labels).unwrap());
        prop_assert!((auc - area).abs() < 1e-12);
    }

    #[test]
    fn pr_points_match_threshold_sweep((scores, labels) in instance()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let curve = pr_curve(&scores, &labels).unwrap();
        let mut thresholds: Vec<f64> = scores.clone();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        prop_assert_eq!(curve.len(), thresholds.len());
        let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
        for (pt, &t) in curve.iter().zip(&thresholds) {
            let tp = scores.iter().zip(&labels).filter(|(&s, &l)| s >= t && l == 1).count() as f64;
            let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
            prop_assert_eq!(pt.threshold, t);
            prop_assert!((pt.x - tp / positives).abs() < 1e-12);
            prop_assert!((pt.y - tp / predicted).abs() < 1e-12);
        }
    }

    #[test]
    fn mcc_kappa_class_swap(tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tp in 0u64..500) {
        prop_assume!(tn + fp + fn_ + tp > 0);
        let cm = ConfusionMatrix::new(tn, fp, fn_, tp);
        let swapped = ConfusionMatrix::new(tp, fn_, fp, tn);
        prop_assert!((mcc(&cm).value - mcc(&swapped).value).abs() < 1e-12);
        prop_assert!((kappa(&cm).value - kappa(&swapped).value).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&mcc(&cm).value));
        prop_assert!((-1.0..=1.0).contains(&kappa(&cm).value));
        let s = summary(&cm);
        for r in [s.accuracy, s.precision, s.recall, s.f1] {
            prop_assert!((0.0..=1.0).contains(&r.value));
        }
    }
}

#[test]
fn four_sample_example() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0, 0, 1, 1];
    assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.75);
    assert_eq!(pairwise_auc(&scores, &labels), 0.75);
}
