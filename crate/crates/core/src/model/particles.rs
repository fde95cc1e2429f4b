use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::network::ModelParams;
use crate::baselines::{compute_intervals, decay, last_observed, TimeIntervals};
use crate::data::MaskedTimeSeries;
use crate::error::{contract, Error, Result};
use crate::numerics::{Cholesky, Graph, Tensor, Var};
use crate::Scalar;

/// ObsDropout keep mask `m`, row-major over cells; `true` keeps the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct DropMask {
    pub keep: Vec<bool>,
    pub beta: f64,
}

impl DropMask {
    pub fn keep_all(cells: usize) -> Self {
        Self {
            keep: vec![true; cells],
            beta: 0.0,
        }
    }
}

/// `m ~ Bernoulli(1 − β)` for every cell.
pub fn obsdropout_mask<R: Rng>(cells: usize, beta: f64, rng: &mut R) -> Result<DropMask> {
    if !(0.0..1.0).contains(&beta) {
        return contract(format!("dropout rate {beta} outside [0, 1)"));
    }
    let keep = (0..cells).map(|_| rng.random::<f64>() < 1.0 - beta).collect();
    Ok(DropMask { keep, beta })
}

/// The random inputs of `particles` stacked draws for one series: latent
/// noise `[P·T, z]`, missing-value noise `[P·T, d]` and the dropout mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleNoise<T> {
    pub particles: usize,
    pub eps_z: Tensor<T>,
    pub eps_x: Tensor<T>,
    pub drop: DropMask,
}

impl<T: Scalar> ParticleNoise<T> {
    /// Gaussian noise from `noise`, the dropout mask from `dropout`; the
    /// two streams are separate so `β` never shifts the Gaussian draws.
    pub fn draw<R1: Rng, R2: Rng>(
        particles: usize,
        t_len: usize,
        z_dim: usize,
        d: usize,
        beta: f64,
        noise: &mut R1,
        dropout: &mut R2,
    ) -> Result<Self> {
        if particles == 0 {
            return contract("at least one particle is required");
        }
        let rows = particles * t_len;
        let mut normal = || -> T {
            let v: f64 = StandardNormal.sample(noise);
            T::lit(v)
        };
        let eps_z = Tensor::from_fn(rows, z_dim, |_, _| normal());
        let eps_x = Tensor::from_fn(rows, d, |_, _| normal());
        let drop = obsdropout_mask(rows * d, beta, dropout)?;
        Ok(Self {
            particles,
            eps_z,
            eps_x,
            drop,
        })
    }

    /// All-zero noise (mode samples) with nothing dropped.
    pub fn zeros(particles: usize, t_len: usize, z_dim: usize, d: usize) -> Self {
        let rows = particles * t_len;
        Self {
            particles,
            eps_z: Tensor::zeros(rows, z_dim),
            eps_x: Tensor::zeros(rows, d),
            drop: DropMask::keep_all(rows * d),
        }
    }
}

/// `x̂ = u·x + (1−u)·(x̃ + h·γ·(x_last − x̃))` with `u = s·m`,
/// `γ = exp(−max(0, w·δ + b))` per feature, `x_last` the previous
/// observation and `h` whether one exists (otherwise `x̃` is used).
pub fn decayed_impute(
    series: &MaskedTimeSeries,
    x_tilde: &[f64],
    keep: &[bool],
    delta: &TimeIntervals,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let d = series.n_features();
    let (x_last, has) = last_observed(series.zero_filled(), series.mask(), d, &vec![0.0; d]);
    (0..x_tilde.len())
        .map(|i| {
            let j = i % d;
            if series.mask()[i] && keep[i] {
                return series.zero_filled()[i];
            }
            let gen = x_tilde[i];
            if !has[i] {
                return gen;
            }
            let gamma = (-(w[j] * delta.delta[i] + b[j]).max(0.0)).exp();
            gen + gamma * (x_last[i] - gen)
        })
        .collect()
}

/// Which optional terms a forward pass builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardParts {
    pub missing: bool,
    pub classifier: bool,
}

/// Tape handles for `batch` series × `particles` draws; per-particle
/// terms are `[batch·particles, 1]`, rows ordered series-major.
#[derive(Clone, Debug)]
pub struct ParticleVars {
    pub batch: usize,
    pub particles: usize,
    pub t_len: usize,
    pub z: Var,
    pub mu_dec: Var,
    pub sigma_dec: Var,
    pub x_tilde: Var,
    pub log_q: Var,
    pub log_pz: Var,
    pub log_xo: Var,
    pub log_s: Option<Var>,
    /// `[batch·particles, C]`, or `[batch·particles·T, C]` when online.
    pub class_logp: Option<Var>,
}

fn bit<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Encoder input `[T, 2d]`: zero-imputed values then the mask.
    pub fn encoder_input(&self, series: &MaskedTimeSeries) -> Tensor<T> {
        let d = series.n_features();
        Tensor::from_fn(series.len(), 2 * d, |t, c| {
            if c < d {
                T::lit(series.zero_filled()[t * d + c])
            } else {
                bit(series.is_observed(t, c - d))
            }
        })
    }

    /// Builds the per-particle terms for series sharing one time grid
    /// (`chol` factors its gram).
    pub fn particle_forward(
        &self,
        g: &mut Graph<T>,
        series: &[&MaskedTimeSeries],
        noise: &[&ParticleNoise<T>],
        chol: Rc<Cholesky<T>>,
        parts: ForwardParts,
    ) -> Result<ParticleVars> {
        let batch = series.len();
        if batch == 0 || noise.len() != batch {
            return contract("one noise bundle per series is required");
        }
        let t_len = series[0].len();
        let d = self.config.n_features;
        let p = noise[0].particles;
        if series.iter().any(|s| s.len() != t_len || s.n_features() != d) || chol.dim() != t_len {
            return contract("batched series must share the time grid and feature count");
        }
        if noise.iter().any(|n| n.particles != p || n.eps_z.rows() != p * t_len || n.eps_z.cols() != self.config.z_dim) {
            return contract("noise does not match the particle layout");
        }
        let rows = batch * p * t_len;
        let store = &self.store;

        let mut enc_rows = Vec::with_capacity(batch * t_len * 2 * d);
        for s in series {
            enc_rows.extend_from_slice(self.encoder_input(s).data());
        }
        let enc_in = g.constant(Tensor::matrix(batch * t_len, 2 * d, enc_rows));
        let (mu_e, sig_e) = self.encoder.forward(g, store, enc_in, batch);
        let expand: Vec<usize> = (0..batch)
            .flat_map(|b| (0..p).flat_map(move |_| (0..t_len).map(move |t| b * t_len + t)))
            .collect();
        let mu = g.select_rows(mu_e, expand.clone());
        let sig = g.select_rows(sig_e, expand);

        let stack = |f: &dyn Fn(&ParticleNoise<T>) -> &Tensor<T>| {
            let cols = f(noise[0]).cols();
            let mut data = Vec::with_capacity(rows * cols);
            for n in noise {
                data.extend_from_slice(f(n).data());
            }
            Tensor::matrix(rows, cols, data)
        };
        let eps_z = g.constant(stack(&|n| &n.eps_z));
        let spread = g.mul(sig, eps_z);
        let z = g.add(mu, spread);
        let lq = g.gauss_logpdf(z, mu, sig);
        let log_q = g.block_sum(lq, batch * p);
        let log_pz = g.gp_prior_logpdf(z, batch * p, chol);

        let (mu_dec, sigma_dec) = self.decoder.forward(g, store, z, batch * p);

        // Per-cell constants, repeated for each particle.
        let mut xs = Vec::with_capacity(rows * d);
        let mut sm = Vec::with_capacity(rows * d);
        let mut miss = Vec::with_capacity(rows * d);
        for s in series {
            for _ in 0..p {
                xs.extend(s.zero_filled().iter().map(|&v| T::lit(v)));
                sm.extend(s.mask().iter().map(|&m| bit::<T>(m)));
                miss.extend(s.mask().iter().map(|&m| bit::<T>(!m)));
            }
        }
        let s_tensor = Rc::new(Tensor::matrix(rows, d, sm));
        let xs = g.constant(Tensor::matrix(rows, d, xs));
        let s_c = g.constant((*s_tensor).clone());
        let miss_c = g.constant(Tensor::matrix(rows, d, miss));

        let ll = g.gauss_logpdf(xs, mu_dec, sigma_dec);
        let ll = g.mul(ll, s_c);
        let log_xo = g.block_sum(ll, batch * p);

        let eps_x = g.constant(stack(&|n| &n.eps_x));
        let draw = g.mul(sigma_dec, eps_x);
        let draw = g.add(mu_dec, draw);
        let fill = g.mul(miss_c, draw);
        let x_tilde = g.add(xs, fill);

        let log_s = parts.missing.then(|| {
            let logits = self.missing.logits(g, store, x_tilde);
            let lp = g.bernoulli_logpmf(logits, s_tensor.clone());
            g.block_sum(lp, batch * p)
        });

        let class_logp = if parts.classifier {
            let x_hat = self.decayed_impute_var(g, series, noise, x_tilde)?;
            Some(self.classifier.forward(g, store, x_hat, batch * p))
        } else {
            None
        };

        Ok(ParticleVars {
            batch,
            particles: p,
            t_len,
            z,
            mu_dec,
            sigma_dec,
            x_tilde,
            log_q,
            log_pz,
            log_xo,
            log_s,
            class_logp,
        })
    }

    fn decayed_impute_var(
        &self,
        g: &mut Graph<T>,
        series: &[&MaskedTimeSeries],
        noise: &[&ParticleNoise<T>],
        x_tilde: Var,
    ) -> Result<Var> {
        let d = self.config.n_features;
        let rows = g.value(x_tilde).rows();
        let mut kept = Vec::with_capacity(rows * d);
        let mut not_kept = Vec::with_capacity(rows * d);
        let mut last = Vec::with_capacity(rows * d);
        let mut has = Vec::with_capacity(rows * d);
        let mut delta = Vec::with_capacity(rows * d);
        for (s, n) in series.iter().zip(noise) {
            let cells = s.mask().len();
            if n.drop.keep.len() != n.particles * cells {
                return contract("dropout mask does not match the particle layout");
            }
            let (x_last, seen) = last_observed(s.zero_filled(), s.mask(), d, &vec![0.0; d]);
            let iv = compute_intervals(s.mask(), s.times(), d);
            for k in 0..n.particles {
                let keep = &n.drop.keep[k * cells..(k + 1) * cells];
                for i in 0..cells {
                    let u = s.mask()[i] && keep[i];
                    kept.push(if u { T::lit(s.zero_filled()[i]) } else { T::zero() });
                    not_kept.push(bit::<T>(!u));
                    last.push(T::lit(x_last[i]));
                    has.push(bit::<T>(seen[i]));
                    delta.push(T::lit(iv.delta[i]));
                }
            }
        }
        let c = |g: &mut Graph<T>, v: Vec<T>| g.constant(Tensor::matrix(rows, d, v));
        let (kept, not_kept, last, has, delta) = (
            c(g, kept),
            c(g, not_kept),
            c(g, last),
            c(g, has),
            c(g, delta),
        );
        let w = g.param(&self.store, self.classifier.decay_w);
        let b = g.param(&self.store, self.classifier.decay_b);
        let pre = g.mul_row(delta, w);
        let pre = g.add_row(pre, b);
        let gamma = decay(g, pre);
        let gap = g.sub(last, x_tilde);
        let hg = g.mul(has, gamma);
        let pull = g.mul(hg, gap);
        let mix = g.add(x_tilde, pull);
        let mix = g.mul(not_kept, mix);
        Ok(g.add(kept, mix))
    }

    /// `log p_λ(y | x̂)` per particle, `[batch·particles, 1]`; online mode
    /// sums the per-step terms.
    pub fn label_term(&self, g: &mut Graph<T>, vars: &ParticleVars, labels: &[usize]) -> Result<Var> {
        let Some(lp) = vars.class_logp else {
            return contract("classifier was not run");
        };
        if labels.len() != vars.batch {
            return contract("one label per series is required");
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.config.n_classes) {
            return contract(format!("label {y} out of range for {} classes", self.config.n_classes));
        }
        let per_row = if self.config.online { vars.t_len } else { 1 };
        let idx: Vec<usize> = labels
            .iter()
            .flat_map(|&y| std::iter::repeat_n(y, vars.particles * per_row))
            .collect();
        let picked = g.pick_cols(lp, idx);
        Ok(if per_row == 1 {
            picked
        } else {
            g.block_sum(picked, vars.batch * vars.particles)
        })
    }
}

/// Errors if any entry of a `[n, 1]` component is non-finite.
pub(crate) fn check_finite<T: Scalar>(g: &Graph<T>, v: Var, name: &str) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("importance-weight component {name}")))
    }
}
