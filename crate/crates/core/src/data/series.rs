use serde::{Deserialize, Serialize};

use super::FeatureStats;
use crate::error::{contract, Result};

/// One multivariate series on a shared time grid.
///
/// `values` is row-major `[T, d]`. Cells with mask 0 hold the sentinel
/// `0.0` and are not data; use [`MaskedTimeSeries::observed`] to read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedTimeSeries {
    pub id: String,
    times: Vec<f64>,
    values: Vec<f64>,
    mask: Vec<bool>,
    n_features: usize,
    pub label: Option<usize>,
}

impl MaskedTimeSeries {
    pub fn new(
        id: impl Into<String>,
        times: Vec<f64>,
        mut values: Vec<f64>,
        mask: Vec<bool>,
        n_features: usize,
        label: Option<usize>,
    ) -> Result<Self> {
        let t = times.len();
        if t == 0 || n_features == 0 {
            return contract("a series needs at least one time step and one feature");
        }
        if values.len() != t * n_features || mask.len() != t * n_features {
            return contract(format!(
                "series has {} values and {} mask bits for a {t}×{n_features} grid",
                values.len(),
                mask.len()
            ));
        }
        if times.iter().any(|x| !x.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return contract("times must be finite and strictly increasing");
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return contract("observed values must be finite");
            }
        }
        Ok(Self {
            id: id.into(),
            times,
            values,
            mask,
            n_features,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn is_observed(&self, t: usize, j: usize) -> bool {
        self.mask[t * self.n_features + j]
    }

    pub fn observed(&self, t: usize, j: usize) -> Option<f64> {
        let i = t * self.n_features + j;
        self.mask[i].then(|| self.values[i])
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Values with the zero sentinel in unobserved cells (zero imputation).
    pub fn zero_filled(&self) -> &[f64] {
        &self.values
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy with cells for which `hide(t, j)` is true unobserved.
    pub fn with_hidden(&self, hide: impl Fn(usize, usize) -> bool) -> Self {
        let mut out = self.clone();
        let d = self.n_features;
        for i in 0..out.mask.len() {
            if out.mask[i] && hide(i / d, i % d) {
                out.mask[i] = false;
                out.values[i] = 0.0;
            }
        }
        out
    }

    pub(crate) fn map_observed(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        let d = self.n_features;
        for i in 0..out.values.len() {
            if out.mask[i] {
                out.values[i] = f(i % d, out.values[i]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub series: Vec<MaskedTimeSeries>,
    pub feature_names: Vec<String>,
    pub split: Split,
    /// Observed-entry statistics of the training split, in the units of
    /// the values currently held.
    pub stats: Option<FeatureStats>,
    /// The standardization applied to reach the current units, if any.
    pub standardization: Option<FeatureStats>,
}

impl Dataset {
    pub fn new(series: Vec<MaskedTimeSeries>, feature_names: Vec<String>, split: Split) -> Result<Self> {
        let d = feature_names.len();
        if let Some(s) = series.iter().find(|s| s.n_features() != d) {
            return contract(format!(
                "series `{}` has {} features, dataset has {d}",
                s.id,
                s.n_features()
            ));
        }
        Ok(Self {
            series,
            feature_names,
            split,
            stats: None,
            standardization: None,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn n_classes(&self) -> usize {
        self.series.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1)
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.series.iter().map(|s| s.label).collect()
    }

    /// Fit observed-entry statistics on this dataset and store them.
    pub fn fit_stats(mut self) -> Result<Self> {
        self.stats = Some(FeatureStats::fit(&self)?);
        Ok(self)
    }

    pub fn with_stats(mut self, stats: FeatureStats) -> Self {
        self.stats = Some(stats);
        self
    }

    pub fn n_observed(&self) -> usize {
        self.series.iter().map(|s| s.n_observed()).sum()
    }

    pub fn missing_rate(&self) -> f64 {
        let total: usize = self.series.iter().map(|s| s.len() * s.n_features()).sum();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.n_observed() as f64 / total as f64
    }

    /// Subset in the given order, keeping metadata.
    pub fn subset(&self, idx: &[usize], split: Split) -> Self {
        Self {
            series: idx.iter().map(|&i| self.series[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            split,
            stats: self.stats.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_replaces_unobserved_values() {
        let s = MaskedTimeSeries::new("a", vec![0.0, 1.0], vec![1.0, 9.0, 3.0, 4.0], vec![true, false, true, true], 2, None)
            .unwrap();
        assert_eq!(s.zero_filled(), &[1.0, 0.0, 3.0, 4.0]);
        assert_eq!(s.observed(0, 1), None);
        assert_eq!(s.observed(1, 0), Some(3.0));
    }

    #[test]
    fn times_must_increase() {
        assert!(MaskedTimeSeries::new("a", vec![0.0, 0.0], vec![0.0; 2], vec![true; 2], 1, None).is_err());
        assert!(MaskedTimeSeries::new("a", vec![1.0, 0.0], vec![0.0; 2], vec![true; 2], 1, None).is_err());
    }
}
