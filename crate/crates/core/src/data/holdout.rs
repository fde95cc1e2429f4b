use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{contract, Result};
use crate::rng::{self, Stream};

/// Observed cells hidden for imputation scoring, with their true values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutMask {
    /// Per series, row-major `[T, d]`; true where hidden.
    pub hidden: Vec<Vec<bool>>,
    /// Per series, the hidden ground truth (0 elsewhere).
    pub truth: Vec<Vec<f64>>,
    pub n_features: usize,
}

impl HoldoutMask {
    pub fn len(&self) -> usize {
        self.hidden.iter().flatten().filter(|&&h| h).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(series, t, j, value)` for each hidden cell.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let d = self.n_features;
        self.hidden.iter().enumerate().flat_map(move |(s, h)| {
            h.iter()
                .enumerate()
                .filter(|(_, &x)| x)
                .map(move |(i, _)| (s, i / d, i % d, self.truth[s][i]))
        })
    }
}

/// Hides `round(rate · N_obs)` observed cells chosen uniformly without
/// replacement.
pub fn make_holdout(ds: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, HoldoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return contract(format!("holdout rate {rate} outside [0, 1)"));
    }
    let mut observed = Vec::new();
    for (si, s) in ds.series.iter().enumerate() {
        for (i, &m) in s.mask().iter().enumerate() {
            if m {
                observed.push((si, i));
            }
        }
    }
    let count = (rate * observed.len() as f64).round() as usize;
    let mut rng = rng::derive(seed, Stream::Holdout, &[]);
    let mut hidden: Vec<Vec<bool>> = ds.series.iter().map(|s| vec![false; s.mask().len()]).collect();
    for k in sample(&mut rng, observed.len(), count) {
        let (si, i) = observed[k];
        hidden[si][i] = true;
    }
    let d = ds.n_features();
    let mut truth = Vec::with_capacity(ds.len());
    let mut out = ds.clone();
    for (si, s) in ds.series.iter().enumerate() {
        let h = &hidden[si];
        truth.push(
            s.zero_filled()
                .iter()
                .zip(h)
                .map(|(&v, &x)| if x { v } else { 0.0 })
                .collect(),
        );
        out.series[si] = s.with_hidden(|t, j| h[t * d + j]);
    }
    Ok((
        out,
        HoldoutMask {
            hidden,
            truth,
            n_features: d,
        },
    ))
}
