//! Classification and calibration metrics.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Lower clamp applied to probabilities inside logarithms.
pub const PROB_CLAMP: f64 = 1e-12;
pub const DEFAULT_ECE_BINS: usize = 10;

/// Metrics for one evaluation run; absent values serialize as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub cross_entropy: Option<f64>,
    pub ece: Option<f64>,
    pub brier: Option<f64>,
    pub mae: Option<f64>,
    pub mre: Option<f64>,
    pub n: usize,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
}

impl MetricsReport {
    /// Every classification metric for predictive distributions `probs`.
    /// AUROC is only computed for two classes and left empty when a
    /// class is absent.
    pub fn from_predictions(probs: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        check_probs(probs, labels)?;
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let (acc, prec, rec) = accuracy_precision_recall(&preds, labels, probs[0].len())?;
        let auroc = if probs[0].len() == 2 {
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
            match auroc(&scores, &pos) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(Self {
            auroc,
            accuracy: Some(acc),
            precision: prec,
            recall: rec,
            cross_entropy: Some(cross_entropy(probs, labels)?),
            ece: Some(ece(probs, labels, DEFAULT_ECE_BINS)?),
            brier: Some(brier(probs, labels)?),
            n: labels.len(),
            ..Default::default()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn check_probs(probs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if probs.is_empty() || probs.len() != labels.len() {
        return contract(format!("{} predictions for {} labels", probs.len(), labels.len()));
    }
    let c = probs[0].len();
    for (p, &y) in probs.iter().zip(labels) {
        if p.len() != c || y >= c {
            return contract("prediction rows must share the class count and cover every label");
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predicted probabilities".into()));
        }
    }
    Ok(())
}

/// Mann–Whitney AUROC with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return contract("scores and labels differ in length");
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUROC scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_probs(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].clamp(PROB_CLAMP, 1.0).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Equal-width bins over `(0, 1]` on max-class confidence.
pub fn ece(probs: &[Vec<f64>], labels: &[usize], bins: usize) -> Result<f64> {
    check_probs(probs, labels)?;
    if bins == 0 {
        return contract("ECE needs at least one bin");
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    for (p, &y) in probs.iter().zip(labels) {
        let k = argmax(p);
        let c = p[k].clamp(0.0, 1.0);
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf[b] += c;
        if k == y {
            correct[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            nb / n * (correct[b] / nb - conf[b] / nb).abs()
        })
        .sum())
}

/// Sum over classes of squared error against the one-hot label.
pub fn brier(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_probs(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let t = if c == y { 1.0 } else { 0.0 };
                    (v - t) * (v - t)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Accuracy with precision and recall of class 1 for two classes, or
/// macro-averaged over classes otherwise. A component whose denominator
/// is zero is `None`; macro averages skip undefined classes and are
/// `None` only when every class is undefined.
pub fn accuracy_precision_recall(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<(f64, Option<f64>, Option<f64>)> {
    if preds.is_empty() || preds.len() != labels.len() {
        return contract(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    let n = preds.len() as f64;
    let acc = preds.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / n;
    let per_class = |c: usize| {
        let tp = preds.iter().zip(labels).filter(|&(&p, &y)| p == c && y == c).count();
        let fp = preds.iter().zip(labels).filter(|&(&p, &y)| p == c && y != c).count();
        let fnn = preds.iter().zip(labels).filter(|&(&p, &y)| p != c && y == c).count();
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        (ratio(tp, tp + fp), ratio(tp, tp + fnn))
    };
    if n_classes <= 2 {
        let (p, r) = per_class(1);
        return Ok((acc, p, r));
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let stats: Vec<_> = (0..n_classes).map(per_class).collect();
    Ok((
        acc,
        mean(stats.iter().filter_map(|s| s.0).collect()),
        mean(stats.iter().filter_map(|s| s.1).collect()),
    ))
}
