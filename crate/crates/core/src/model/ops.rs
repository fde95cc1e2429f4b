//! Single-series entry points to each network, evaluated on a fresh tape.

use std::collections::HashMap;
use std::rc::Rc;

use super::network::ModelParams;
use super::prior::{gp_prior_logpdf, prior_cholesky};
use crate::data::{Dataset, MaskedTimeSeries};
use crate::error::{contract, Result};
use crate::numerics::{clamp_prob, gaussian_diag_logpdf, Cholesky, Graph, Tensor};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<T> {
    /// `[T, z]`
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput<T> {
    /// `[T, d]`
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPath<T> {
    pub z: Tensor<T>,
    pub log_q: T,
    pub log_pz: T,
}

impl<T: Scalar> ModelParams<T> {
    pub fn encoder_forward(&self, series: &MaskedTimeSeries) -> EncoderOutput<T> {
        let mut g = Graph::new();
        let x = g.constant(self.encoder_input(series));
        let (mu, sigma) = self.encoder.forward(&mut g, &self.store, x, 1);
        EncoderOutput {
            mu: g.value(mu).clone(),
            sigma: g.value(sigma).clone(),
        }
    }

    pub fn decoder_forward(&self, z: &Tensor<T>) -> DecoderOutput<T> {
        let mut g = Graph::new();
        let z = g.constant(z.clone());
        let (mu, sigma) = self.decoder.forward(&mut g, &self.store, z, 1);
        DecoderOutput {
            mu: g.value(mu).clone(),
            sigma: g.value(sigma).clone(),
        }
    }

    /// Bernoulli observation probabilities for a complete series `[T, d]`,
    /// clamped to `[1e-6, 1 − 1e-6]`.
    pub fn missing_model_forward(&self, x_tilde: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::new();
        let x = g.constant(x_tilde.clone());
        let logits = self.missing.logits(&mut g, &self.store, x);
        g.value(logits).map(|v| clamp_prob(T::one() / (T::one() + (-v).exp())))
    }

    /// Class log-probabilities: `[1, C]`, or `[T, C]` in online mode.
    pub fn classifier_forward(&self, x_hat: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::new();
        let x = g.constant(x_hat.clone());
        let lp = self.classifier.forward(&mut g, &self.store, x, 1);
        g.value(lp).clone()
    }
}

/// `K` reparameterized draws `z = μ + σ⊙ε` from stacked noise `[K·T, z]`.
pub fn sample_latents<T: Scalar>(enc: &EncoderOutput<T>, chol: &Cholesky<T>, eps: &Tensor<T>) -> Result<Vec<LatentPath<T>>> {
    let (t_len, zd) = (enc.mu.rows(), enc.mu.cols());
    if eps.cols() != zd || eps.rows() % t_len != 0 || eps.rows() == 0 {
        return contract("latent noise does not match the encoder output");
    }
    (0..eps.rows() / t_len)
        .map(|k| {
            let z = Tensor::from_fn(t_len, zd, |t, j| {
                enc.mu.at(t, j) + enc.sigma.at(t, j) * eps.at(k * t_len + t, j)
            });
            let log_q = gaussian_diag_logpdf(z.data(), enc.mu.data(), enc.sigma.data())?;
            let log_pz = gp_prior_logpdf(&z, chol)?;
            Ok(LatentPath { z, log_q, log_pz })
        })
        .collect()
}

/// Observed cells keep their values; missing cells get `μ + σ⊙ε`.
pub fn sample_missing<T: Scalar>(dec: &DecoderOutput<T>, series: &MaskedTimeSeries, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if dec.mu.shape() != eps.shape() || dec.mu.rows() != series.len() || dec.mu.cols() != series.n_features() {
        return contract("decoder output, noise and series shapes differ");
    }
    let d = series.n_features();
    Ok(Tensor::from_fn(series.len(), d, |t, j| match series.observed(t, j) {
        Some(v) => T::lit(v),
        None => dec.mu.at(t, j) + dec.sigma.at(t, j) * eps.at(t, j),
    }))
}

/// `Σ` over observed cells of the Gaussian log-density.
pub fn observed_loglik<T: Scalar>(dec: &DecoderOutput<T>, series: &MaskedTimeSeries) -> Result<T> {
    let d = series.n_features();
    let mut x = Vec::new();
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for (i, &m) in series.mask().iter().enumerate() {
        if m {
            x.push(T::lit(series.zero_filled()[i]));
            mu.push(dec.mu.at(i / d, i % d));
            sigma.push(dec.sigma.at(i / d, i % d));
        }
    }
    if x.is_empty() {
        return Ok(T::zero());
    }
    gaussian_diag_logpdf(&x, &mu, &sigma)
}

/// Cholesky factors of the prior gram, shared by series on the same grid.
#[derive(Debug, Default)]
pub struct PriorCache<T> {
    grids: HashMap<Vec<u64>, Rc<Cholesky<T>>>,
}

impl<T: Scalar> PriorCache<T> {
    pub fn new() -> Self {
        Self { grids: HashMap::new() }
    }

    pub fn get(&mut self, times: &[f64], model: &ModelParams<T>) -> Result<Rc<Cholesky<T>>> {
        let key: Vec<u64> = times.iter().map(|t| t.to_bits()).collect();
        if let Some(c) = self.grids.get(&key) {
            return Ok(c.clone());
        }
        let c = Rc::new(prior_cholesky(times, &model.config.kernel)?);
        self.grids.insert(key, c.clone());
        Ok(c)
    }
}

/// Index lists of series sharing an identical time grid, in order of
/// first appearance.
pub fn group_by_grid(ds: &Dataset, idx: &[usize]) -> Vec<Vec<usize>> {
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in idx {
        let key: Vec<u64> = ds.series[i].times().iter().map(|t| t.to_bits()).collect();
        match keys.iter().position(|k| *k == key) {
            Some(p) => groups[p].push(i),
            None => {
                keys.push(key);
                groups.push(vec![i]);
            }
        }
    }
    groups
}
