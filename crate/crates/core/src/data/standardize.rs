use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{contract, Error, Result};

/// Per-feature mean and population standard deviation over observed
/// entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let d = ds.n_features();
        let mut n = vec![0usize; d];
        let mut sum = vec![0.0; d];
        for s in &ds.series {
            for t in 0..s.len() {
                for j in 0..d {
                    if let Some(v) = s.observed(t, j) {
                        n[j] += 1;
                        sum[j] += v;
                    }
                }
            }
        }
        if let Some(j) = n.iter().position(|&c| c == 0) {
            return contract(format!("feature `{}` has no observed entries", ds.feature_names[j]));
        }
        let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &c)| s / c as f64).collect();
        let mut ss = vec![0.0; d];
        for s in &ds.series {
            for t in 0..s.len() {
                for j in 0..d {
                    if let Some(v) = s.observed(t, j) {
                        ss[j] += (v - mean[j]) * (v - mean[j]);
                    }
                }
            }
        }
        let std: Vec<f64> = ss.iter().zip(&n).map(|(s, &c)| (s / c as f64).sqrt()).collect();
        if let Some(j) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::ZeroVariance(ds.feature_names[j].clone()));
        }
        Ok(Self { mean, std })
    }

    pub fn unit(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }
}

/// `(x − x̄_j) / std_j` on observed entries, using the training-split
/// statistics stored on `ds`.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let Some(stats) = ds.stats.clone() else {
        return contract("standardize needs training-split statistics");
    };
    if let Some(j) = stats.std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroVariance(ds.feature_names[j].clone()));
    }
    let mut out = ds.clone();
    out.series = ds
        .series
        .iter()
        .map(|s| s.map_observed(|j, v| (v - stats.mean[j]) / stats.std[j]))
        .collect();
    out.stats = Some(FeatureStats::unit(ds.n_features()));
    out.standardization = Some(stats);
    Ok(out)
}

pub fn unstandardize(ds: &Dataset) -> Result<Dataset> {
    let Some(stats) = ds.standardization.clone() else {
        return contract("dataset is not standardized");
    };
    let mut out = ds.clone();
    out.series = ds
        .series
        .iter()
        .map(|s| s.map_observed(|j, v| v * stats.std[j] + stats.mean[j]))
        .collect();
    out.stats = Some(stats);
    out.standardization = None;
    Ok(out)
}
