use serde::{Deserialize, Serialize};

use crate::data::{FeatureStats, MaskedTimeSeries};

/// Time since the previous observation of each feature, row-major `[T, d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeIntervals {
    pub delta: Vec<f64>,
    pub n_features: usize,
}

impl TimeIntervals {
    pub fn at(&self, t: usize, j: usize) -> f64 {
        self.delta[t * self.n_features + j]
    }
}

/// `δ_{1,j} = 0`; afterwards the gap to the previous step, accumulated
/// while feature `j` stays unobserved.
pub fn compute_intervals(mask: &[bool], times: &[f64], d: usize) -> TimeIntervals {
    let t_len = times.len();
    assert_eq!(mask.len(), t_len * d, "mask does not match the time grid");
    let mut delta = vec![0.0; t_len * d];
    for t in 1..t_len {
        let gap = times[t] - times[t - 1];
        for j in 0..d {
            delta[t * d + j] = if mask[(t - 1) * d + j] {
                gap
            } else {
                gap + delta[(t - 1) * d + j]
            };
        }
    }
    TimeIntervals { delta, n_features: d }
}

pub fn impute_zero(series: &MaskedTimeSeries) -> Vec<f64> {
    series.zero_filled().to_vec()
}

pub fn impute_mean(series: &MaskedTimeSeries, stats: &FeatureStats) -> Vec<f64> {
    let d = series.n_features();
    let mut out = series.zero_filled().to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        if !series.mask()[i] {
            *v = stats.mean[i % d];
        }
    }
    out
}

/// Carry the last observation forward; the feature mean stands in before
/// the first observation.
pub fn impute_forward(series: &MaskedTimeSeries, stats: &FeatureStats) -> Vec<f64> {
    let d = series.n_features();
    let mut out = series.zero_filled().to_vec();
    let mut last = stats.mean.clone();
    for (i, v) in out.iter_mut().enumerate() {
        let j = i % d;
        if series.mask()[i] {
            last[j] = *v;
        } else {
            *v = last[j];
        }
    }
    out
}

/// For each cell, the most recent observation strictly before `t` and
/// whether one exists. Cells without one hold `fallback[j]`.
pub fn last_observed(values: &[f64], mask: &[bool], d: usize, fallback: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut last = fallback.to_vec();
    let mut seen = vec![false; d];
    let mut x_last = vec![0.0; values.len()];
    let mut has = vec![false; values.len()];
    for i in 0..values.len() {
        let j = i % d;
        x_last[i] = last[j];
        has[i] = seen[j];
        if mask[i] {
            last[j] = values[i];
            seen[j] = true;
        }
    }
    (x_last, has)
}

/// `exp(−max(0, w·δ + b))`, always in `(0, 1]`.
pub fn decay_gamma(delta: f64, w: f64, b: f64) -> f64 {
    (-(w * delta + b).max(0.0)).exp()
}

/// Observed value if `s`, otherwise a `γ`-weighted mix of the last
/// observation and the feature mean.
pub fn grud_impute(s: bool, x: f64, gamma: f64, x_last: f64, x_mean: f64) -> f64 {
    if s {
        x
    } else {
        gamma * x_last + (1.0 - gamma) * x_mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_examples() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(compute_intervals(&[true, true, true], &t, 1).delta, vec![0.0, 1.0, 1.0]);
        assert_eq!(compute_intervals(&[true, false, false], &t, 1).delta, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn grud_impute_examples() {
        assert_eq!(grud_impute(true, 7.0, 0.2, 1.0, 2.0), 7.0);
        assert_eq!(grud_impute(false, 7.0, 1.0, 1.5, 2.0), 1.5);
        assert_eq!(grud_impute(false, 7.0, 0.5, 4.0, 2.0), 3.0);
        assert_eq!(decay_gamma(3.0, 0.0, 0.0), 1.0);
        assert_eq!(decay_gamma(3.0, -1.0, 0.5), 1.0);
    }
}
