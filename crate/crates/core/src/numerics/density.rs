//! Numerically stable log-densities and the Cholesky helper they share.

use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;
use crate::Scalar;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bernoulli probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

/// Additive floor on every standard deviation: `softplus(raw) + SIGMA_FLOOR`.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// `log Σ exp(v_i)`, shifted by the maximum.
pub fn logsumexp<T: Scalar>(v: &[T]) -> Result<T> {
    if v.is_empty() {
        return contract("logsumexp of an empty vector");
    }
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return contract("logsumexp of an all -inf vector");
    }
    if !m.is_finite() {
        return contract("logsumexp input contains +inf or NaN");
    }
    let s: T = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

pub fn gaussian_diag_logpdf<T: Scalar>(x: &[T], mu: &[T], sigma: &[T]) -> Result<T> {
    if x.len() != mu.len() || x.len() != sigma.len() {
        return contract("gaussian_diag_logpdf length mismatch");
    }
    let half_ln2pi = T::lit(0.5 * LN_2PI);
    let half = T::lit(0.5);
    let mut acc = T::zero();
    for ((&x, &m), &s) in x.iter().zip(mu).zip(sigma) {
        if !(s > T::zero()) {
            return contract(format!("non-positive standard deviation {s}"));
        }
        let r = (x - m) / s;
        acc = acc - half_ln2pi - s.ln() - half * r * r;
    }
    Ok(acc)
}

pub fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// `s log p + (1 - s) log(1 - p)` with `p` clamped.
pub fn bernoulli_logpmf<T: Scalar>(s: bool, p: T) -> T {
    let p = clamp_prob(p);
    if s {
        p.ln()
    } else {
        (T::one() - p).ln()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix, plus the diagonal jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Tensor<T>,
    jitter: T,
}

fn try_cholesky<T: Scalar>(a: &Tensor<T>, jitter: T) -> std::result::Result<Tensor<T>, f64> {
    let n = a.rows();
    let mut l = Tensor::zeros(n, n);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a.at(j, j) + jitter;
        for k in 0..j {
            d = d - l.at(j, k) * l.at(j, k);
        }
        min_pivot = min_pivot.min(d.f64());
        if !(d > T::zero()) || !d.is_finite() {
            return Err(min_pivot);
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s = s - l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

impl<T: Scalar> Cholesky<T> {
    /// Factor `gram`. A plain factorization is tried first; on failure a
    /// jitter of `1e-6 × mean(diag)` is added and escalated ×10 up to
    /// `1e-2 × mean(diag)`.
    pub fn factor(gram: &Tensor<T>) -> Result<Self> {
        let n = gram.rows();
        if n == 0 || gram.cols() != n {
            return contract("Cholesky needs a non-empty square matrix");
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (gram.at(i, j), gram.at(j, i));
                if (a - b).abs() > T::lit(1e-9) * (T::one() + a.abs()) {
                    return contract("gram matrix is not symmetric");
                }
            }
        }
        let mut worst = f64::INFINITY;
        match try_cholesky(gram, T::zero()) {
            Ok(l) => return Ok(Self { l, jitter: T::zero() }),
            Err(p) => worst = worst.min(p),
        }
        let mean_diag = (0..n).map(|i| gram.at(i, i)).sum::<T>() / T::lit(n as f64);
        let mut rel = 1e-6;
        while rel <= 1e-2 * (1.0 + 1e-12) {
            let jitter = T::lit(rel) * mean_diag;
            match try_cholesky(gram, jitter) {
                Ok(l) => return Ok(Self { l, jitter }),
                Err(p) => worst = worst.min(p),
            }
            rel *= 10.0;
        }
        Err(Error::SingularKernel { pivot: worst })
    }

    pub fn lower(&self) -> &Tensor<T> {
        &self.l
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| two * self.l.at(i, i).ln()).sum()
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l.at(i, k) * y[k];
            }
            y[i] = s / l.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l.at(k, i) * y[k];
            }
            y[i] = s / l.at(i, i);
        }
        y
    }

    /// `-0.5 [n log 2π + log det + xᵀ K⁻¹ x]`.
    pub fn mvn_logpdf(&self, x: &[T]) -> T {
        let alpha = self.solve(x);
        let quad: T = x.iter().zip(&alpha).map(|(&a, &b)| a * b).sum();
        let n = T::lit(self.dim() as f64);
        T::lit(-0.5) * (n * T::lit(LN_2PI) + self.log_det() + quad)
    }
}

/// Zero-mean multivariate normal log-density via Cholesky.
pub fn mvn_logpdf_chol<T: Scalar>(x: &[T], gram: &Tensor<T>) -> Result<T> {
    if x.len() != gram.rows() {
        return contract("mvn_logpdf_chol length mismatch");
    }
    Ok(Cholesky::factor(gram)?.mvn_logpdf(x))
}
