use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numerics::{Cholesky, Tensor};
use crate::Scalar;

/// Cauchy kernel `k(t, t') = σ² / (1 + (t − t')² / l²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub length_scale: f64,
    pub variance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.2,
            variance: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0) || !(self.variance > 0.0) {
            return contract("kernel length scale and variance must be positive");
        }
        Ok(())
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let r = (a - b) / self.length_scale;
        self.variance / (1.0 + r * r)
    }
}

pub fn build_gram<T: Scalar>(times: &[f64], kc: &KernelConfig) -> Tensor<T> {
    let n = times.len();
    Tensor::from_fn(n, n, |i, j| T::lit(kc.eval(times[i], times[j])))
}

pub fn prior_cholesky<T: Scalar>(times: &[f64], kc: &KernelConfig) -> Result<Cholesky<T>> {
    kc.validate()?;
    Cholesky::factor(&build_gram(times, kc))
}

/// Sum over latent columns of `z` (`[T, z_dim]`) of the zero-mean GP
/// log-density; every column shares one gram.
pub fn gp_prior_logpdf<T: Scalar>(z: &Tensor<T>, chol: &Cholesky<T>) -> Result<T> {
    if z.rows() != chol.dim() {
        return contract(format!("latent path has {} steps, gram has {}", z.rows(), chol.dim()));
    }
    let mut total = T::zero();
    let mut col = vec![T::zero(); z.rows()];
    for j in 0..z.cols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = z.at(i, j);
        }
        total = total + chol.mvn_logpdf(&col);
    }
    Ok(total)
}
