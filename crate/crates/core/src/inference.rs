//! Self-normalized importance sampling prediction and probabilistic
//! imputation.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, HoldoutMask, MaskedTimeSeries};
use crate::error::{contract, Error, Result};
use crate::model::{group_by_grid, ForwardParts, ModelParams, ParticleNoise, PriorCache};
use crate::numerics::{Graph, Tensor};
use crate::rng::{self, Stream};
use crate::Scalar;

/// Rows of stacked particles allowed on one tape during prediction.
const MAX_ROWS: usize = 16_384;

/// Marginal weights `log ζ = log p(x^o|z) + log p(z) − log q(z|x^o)` per
/// outer sample and particle, with their per-sample normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnisWeights {
    pub log_w: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
}

impl SnisWeights {
    pub fn from_log(log_w: Vec<Vec<f64>>) -> Result<Self> {
        let normalized = log_w.iter().map(|lw| normalize(lw)).collect::<Result<_>>()?;
        Ok(Self { log_w, normalized })
    }
}

/// `exp(lw − logsumexp(lw))`.
pub fn normalize(lw: &[f64]) -> Result<Vec<f64>> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(if m == f64::NEG_INFINITY {
            Error::DegeneratePosterior
        } else {
            Error::NonFinite("importance weights".into())
        });
    }
    let e: Vec<f64> = lw.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// One series' draws for outer sample `s`: Gaussian noise and the
/// dropout mask come from separate streams keyed by `(series, s)`.
fn noise_for<T: Scalar>(
    params: &ModelParams<T>,
    series: &MaskedTimeSeries,
    k: usize,
    beta: f64,
    seed: u64,
    path: &[u64],
) -> Result<ParticleNoise<T>> {
    let mut nr = rng::derive(seed, Stream::Particles, path);
    let mut dr = rng::derive(seed, Stream::Dropout, path);
    ParticleNoise::draw(
        k,
        series.len(),
        params.config.z_dim,
        params.config.n_features,
        beta,
        &mut nr,
        &mut dr,
    )
}

/// Predictive class distribution with per-sample details.
#[derive(Clone, Debug, PartialEq)]
pub struct SnisPrediction {
    pub probs: Vec<f64>,
    pub weights: SnisWeights,
}

/// `p(y|x^o) ≈ (1/S) Σ_s Σ_k ζ̄_k^{(s)} p_λ(y | x̂_k^{(s)})` for every series
/// of `ds`. Series `i`, outer sample `s` draws from streams keyed by
/// `[i, s]` so results do not depend on batching.
pub fn snis_predict_dataset<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset,
    k: usize,
    samples: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<SnisPrediction>> {
    if k == 0 || samples == 0 {
        return contract("particle and sample counts must be at least 1");
    }
    let c = params.config.n_classes;
    let mut out: Vec<Option<SnisPrediction>> = vec![None; ds.len()];
    let mut cache = PriorCache::new();
    let all: Vec<usize> = (0..ds.len()).collect();
    for group in group_by_grid(ds, &all) {
        let t_len = ds.series[group[0]].len();
        let chol = cache.get(ds.series[group[0]].times(), params)?;
        let per_chunk = (MAX_ROWS / (k * t_len)).max(1);
        for chunk in group.chunks(per_chunk) {
            let series: Vec<&MaskedTimeSeries> = chunk.iter().map(|&i| &ds.series[i]).collect();
            let mut acc = vec![vec![0.0; c]; chunk.len()];
            let mut logs = vec![Vec::with_capacity(samples); chunk.len()];
            for s in 0..samples {
                let noise: Vec<ParticleNoise<T>> = chunk
                    .iter()
                    .map(|&i| noise_for(params, &ds.series[i], k, beta, seed, &[i as u64, s as u64]))
                    .collect::<Result<_>>()?;
                let refs: Vec<&ParticleNoise<T>> = noise.iter().collect();
                let mut g = Graph::new();
                let parts = ForwardParts {
                    missing: false,
                    classifier: true,
                };
                let vars = params.particle_forward(&mut g, &series, &refs, chol.clone(), parts)?;
                let lp = g.value(vars.class_logp.expect("classifier was run"));
                let (xo, pz, q) = (g.value(vars.log_xo), g.value(vars.log_pz), g.value(vars.log_q));
                let per_row = if params.config.online { t_len } else { 1 };
                for b in 0..chunk.len() {
                    let lw: Vec<f64> = (0..k)
                        .map(|j| {
                            let r = b * k + j;
                            (xo.data()[r] + pz.data()[r] - q.data()[r]).f64()
                        })
                        .collect();
                    let w = normalize(&lw)?;
                    for (j, wj) in w.iter().enumerate() {
                        let row = (b * k + j) * per_row + per_row - 1;
                        for (cls, a) in acc[b].iter_mut().enumerate() {
                            *a += wj * lp.at(row, cls).f64().exp();
                        }
                    }
                    logs[b].push(lw);
                }
            }
            for (b, &i) in chunk.iter().enumerate() {
                let mut probs: Vec<f64> = acc[b].iter().map(|v| v / samples as f64).collect();
                let z: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= z);
                out[i] = Some(SnisPrediction {
                    probs,
                    weights: SnisWeights::from_log(std::mem::take(&mut logs[b]))?,
                });
            }
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every series predicted")).collect())
}

/// SNIS prediction for a single series (index 0 of its own dataset).
pub fn snis_predict<T: Scalar>(
    params: &ModelParams<T>,
    series: &MaskedTimeSeries,
    k: usize,
    samples: usize,
    beta: f64,
    seed: u64,
) -> Result<SnisPrediction> {
    let names = (0..series.n_features()).map(|j| format!("f{j}")).collect();
    let ds = Dataset::new(vec![series.clone()], names, crate::data::Split::All)?;
    Ok(snis_predict_dataset(params, &ds, k, samples, beta, seed)?.remove(0))
}

/// Posterior summary of one series' missing cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    /// `[T, d]` point estimates; observed cells carry their values.
    pub mean: Vec<f64>,
    /// `[T, d]` deviations; zero on observed cells.
    pub std: Vec<f64>,
    /// `M` sampled completions `x̃`, each `[T, d]`.
    pub draws: Vec<Vec<f64>>,
    /// Normalized particle weights.
    pub weights: Vec<f64>,
    pub observed: Vec<bool>,
}

impl ImputationResult {
    /// Wraps a deterministic completion (heuristic imputers).
    pub fn point(series: &MaskedTimeSeries, values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            draws: vec![values.clone()],
            mean: values,
            std: vec![0.0; n],
            weights: vec![1.0],
            observed: series.mask().to_vec(),
        }
    }
}

/// `M` posterior particles per series: point estimate is the weighted mean
/// of `μ_dec`; variance is `Σ w̄ (σ² + μ²) − mean²`.
pub fn impute_dataset<T: Scalar>(params: &ModelParams<T>, ds: &Dataset, m: usize, seed: u64) -> Result<Vec<ImputationResult>> {
    if m == 0 {
        return contract("at least one imputation draw is required");
    }
    let mut out: Vec<Option<ImputationResult>> = vec![None; ds.len()];
    let mut cache = PriorCache::new();
    let all: Vec<usize> = (0..ds.len()).collect();
    let d = params.config.n_features;
    for group in group_by_grid(ds, &all) {
        let t_len = ds.series[group[0]].len();
        let chol = cache.get(ds.series[group[0]].times(), params)?;
        let per_chunk = (MAX_ROWS / (m * t_len)).max(1);
        for chunk in group.chunks(per_chunk) {
            let series: Vec<&MaskedTimeSeries> = chunk.iter().map(|&i| &ds.series[i]).collect();
            let noise: Vec<ParticleNoise<T>> = chunk
                .iter()
                .map(|&i| noise_for(params, &ds.series[i], m, 0.0, seed, &[i as u64, u64::MAX]))
                .collect::<Result<_>>()?;
            let refs: Vec<&ParticleNoise<T>> = noise.iter().collect();
            let mut g = Graph::new();
            let parts = ForwardParts {
                missing: false,
                classifier: false,
            };
            let vars = params.particle_forward(&mut g, &series, &refs, chol.clone(), parts)?;
            let (mu, sd, xt) = (g.value(vars.mu_dec), g.value(vars.sigma_dec), g.value(vars.x_tilde));
            let (xo, pz, q) = (g.value(vars.log_xo), g.value(vars.log_pz), g.value(vars.log_q));
            for (b, &i) in chunk.iter().enumerate() {
                let s = &ds.series[i];
                let lw: Vec<f64> = (0..m).map(|j| (xo.data()[b * m + j] + pz.data()[b * m + j] - q.data()[b * m + j]).f64()).collect();
                let w = normalize(&lw)?;
                let cells = t_len * d;
                let base = |j: usize| (b * m + j) * t_len;
                let slice = |t: &Tensor<T>, j: usize| -> Vec<f64> {
                    t.data()[base(j) * d..base(j) * d + cells].iter().map(|v| v.f64()).collect()
                };
                let mut mean = vec![0.0; cells];
                let mut second = vec![0.0; cells];
                let mut draws = Vec::with_capacity(m);
                for (j, &wj) in w.iter().enumerate() {
                    let (mu_j, sd_j) = (slice(mu, j), slice(sd, j));
                    for c in 0..cells {
                        mean[c] += wj * mu_j[c];
                        second[c] += wj * (sd_j[c] * sd_j[c] + mu_j[c] * mu_j[c]);
                    }
                    draws.push(slice(xt, j));
                }
                let mut std = vec![0.0; cells];
                for c in 0..cells {
                    if s.mask()[c] {
                        mean[c] = s.zero_filled()[c];
                    } else {
                        std[c] = (second[c] - mean[c] * mean[c]).max(0.0).sqrt();
                    }
                }
                out[i] = Some(ImputationResult {
                    mean,
                    std,
                    draws,
                    weights: w,
                    observed: s.mask().to_vec(),
                });
            }
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every series imputed")).collect())
}

/// Mean absolute error and mean relative error over the hold-out cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationScore {
    pub mae: f64,
    pub mre: f64,
    pub n: usize,
}

pub fn evaluate_imputation(results: &[ImputationResult], holdout: &HoldoutMask) -> Result<ImputationScore> {
    if holdout.is_empty() {
        return contract("hold-out set is empty");
    }
    if results.len() != holdout.hidden.len() {
        return contract("one imputation per series is required");
    }
    let d = holdout.n_features;
    let (mut abs, mut mag, mut n) = (0.0, 0.0, 0usize);
    for (si, t, j, truth) in holdout.cells() {
        let est = results[si].mean[t * d + j];
        abs += (est - truth).abs();
        mag += truth.abs();
        n += 1;
    }
    if mag == 0.0 {
        return Err(Error::UndefinedMetric("MRE with all-zero hold-out values".into()));
    }
    Ok(ImputationScore {
        mae: abs / n as f64,
        mre: abs / mag,
        n,
    })
}
