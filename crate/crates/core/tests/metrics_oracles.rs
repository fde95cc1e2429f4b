use proptest::prelude::*;
use supnotmiwae::metrics::{auroc, brier, cross_entropy, ece, MetricsReport};

/// Exhaustive pair counting: concordant pairs plus half the ties.
fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

#[test]
fn auroc_hand_example() {
    let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    assert!((a - 0.75).abs() < 1e-15);
}

#[test]
fn cross_entropy_examples() {
    let ce = cross_entropy(&[vec![0.9, 0.1], vec![0.2, 0.8]], &[0, 1]).unwrap();
    let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
    assert!((ce - expected).abs() < 1e-15);
    assert!((ce - 0.1643).abs() < 5e-5);
    assert_eq!(cross_entropy(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap(), 0.0);
    let u = cross_entropy(&[vec![0.5, 0.5]], &[1]).unwrap();
    assert!((u - 2f64.ln()).abs() < 1e-15);
    // a confidently wrong prediction stays finite
    assert!(cross_entropy(&[vec![1.0, 0.0]], &[1]).unwrap().is_finite());
}

#[test]
fn brier_examples() {
    assert!((brier(&[vec![0.8, 0.2]], &[0]).unwrap() - 0.08).abs() < 1e-15);
    assert_eq!(brier(&[vec![0.5, 0.5]], &[1]).unwrap(), 0.5);
    assert_eq!(brier(&[vec![0.0, 1.0]], &[1]).unwrap(), 0.0);
}

#[test]
fn report_serializes_stable_keys() {
    let probs = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4]];
    let r = MetricsReport::from_predictions(&probs, &[0, 1, 1]).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in [
        "auroc", "accuracy", "precision", "recall", "cross_entropy", "ece", "brier", "mae", "mre", "n", "seed",
        "config_digest",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r.auroc, Some(1.0));
    assert_eq!(r.mae, None);
}

fn binary_case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting((scores, labels) in binary_case()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - auroc_pairs(&scores, &labels)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((auroc(&warped, &labels).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn binary_brier_identity((scores, labels) in binary_case()) {
        let probs: Vec<Vec<f64>> = scores.iter().map(|&p| vec![1.0 - p, p]).collect();
        let ys: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let bs = brier(&probs, &ys).unwrap();
        let mse = scores.iter().zip(&labels).map(|(p, &l)| (p - l as u8 as f64).powi(2)).sum::<f64>() / scores.len() as f64;
        prop_assert!((bs - 2.0 * mse).abs() < 1e-12);
    }

    #[test]
    fn ece_and_ce_bounds((scores, labels) in binary_case(), bins in 1usize..20) {
        let probs: Vec<Vec<f64>> = scores.iter().map(|&p| vec![1.0 - p, p]).collect();
        let ys: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let e = ece(&probs, &ys, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(cross_entropy(&probs, &ys).unwrap() >= 0.0);
    }
}
