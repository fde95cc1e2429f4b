use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, MaskedTimeSeries, Split};
use crate::error::{contract, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl std::str::FromStr for Mechanism {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Self::Mcar),
            "mar" => Ok(Self::Mar),
            "mnar" => Ok(Self::Mnar),
            _ => Err(crate::Error::UnknownVariant(format!("missingness mechanism `{s}`"))),
        }
    }
}

/// Drop probabilities: MCAR uses `rate`; MAR and MNAR use
/// `sigmoid(logit(rate) + slope · (x − threshold))` where `x` is the
/// value of feature `(j + 1) mod d` (MAR) or the cell itself (MNAR).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingMechanismConfig {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub slope: f64,
    pub threshold: f64,
}

impl Default for MissingMechanismConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Mnar,
            rate: 0.4,
            slope: 2.0,
            threshold: 0.0,
        }
    }
}

impl MissingMechanismConfig {
    pub fn drop_probability(&self, own: f64, neighbour: f64) -> f64 {
        if self.rate <= 0.0 {
            return 0.0;
        }
        let base = (self.rate / (1.0 - self.rate)).ln();
        let x = match self.mechanism {
            Mechanism::Mcar => return self.rate,
            Mechanism::Mar => neighbour,
            Mechanism::Mnar => own,
        };
        1.0 / (1.0 + (-(base + self.slope * (x - self.threshold))).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub t_len: usize,
    pub d: usize,
    pub classes: usize,
    pub missing: MissingMechanismConfig,
    /// Stationary standard deviation of the AR(1) noise.
    pub noise_std: f64,
    pub ar_rho: f64,
    /// Share of each noise innovation's variance common to all features.
    pub noise_cross_corr: f64,
    /// Level shift per class step on signal features.
    pub class_offset: f64,
    /// Frequency shift (cycles per unit time) per class step on signal features.
    pub class_freq: f64,
    /// Phase shift (radians) per class step on signal features.
    pub class_phase: f64,
    /// Standard deviation (radians) of a per-series phase offset added to
    /// the feature's base phase.
    pub phase_jitter: f64,
    /// Features carrying class signal; `None` means the even-indexed ones.
    pub signal_features: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            t_len: 32,
            d: 6,
            classes: 2,
            missing: MissingMechanismConfig::default(),
            noise_std: 0.5,
            ar_rho: 0.8,
            noise_cross_corr: 0.5,
            class_offset: 0.5,
            class_freq: 0.5,
            class_phase: 0.0,
            phase_jitter: 0.5,
            signal_features: None,
            seed: 0,
        }
    }
}

/// A generated dataset: the masked view and the complete ground truth
/// (same series, ids and labels, every cell observed).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub masked: Dataset,
    pub complete: Dataset,
}

impl SyntheticData {
    /// Random train/val/test partition, applied identically to both views.
    pub fn split(&self, val_frac: f64, test_frac: f64, seed: u64) -> Result<[SyntheticData; 3]> {
        if val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0 {
            return contract(format!("split fractions {val_frac}, {test_frac} leave no training data"));
        }
        let n = self.masked.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::derive(seed, Stream::Shuffle, &[u64::MAX]));
        let n_val = (val_frac * n as f64).round() as usize;
        let n_test = (test_frac * n as f64).round() as usize;
        let (val, rest) = idx.split_at(n_val);
        let (test, train) = rest.split_at(n_test);
        let part = |ix: &[usize], split| SyntheticData {
            masked: self.masked.subset(ix, split),
            complete: self.complete.subset(ix, split),
        };
        Ok([part(train, Split::Train), part(val, Split::Val), part(test, Split::Test)])
    }
}

/// Each feature is a sinusoid with a feature-specific base phase, shifted
/// in level, frequency and phase by the class on signal features, plus a
/// per-series phase jitter and stationary AR(1) noise whose innovations
/// are correlated across features. The mask is then drawn per cell.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let (n, t_len, d, classes) = (cfg.n, cfg.t_len, cfg.d, cfg.classes);
    if n == 0 || t_len == 0 || d == 0 || classes == 0 {
        return contract("n, T, d and classes must all be at least 1");
    }
    if !(0.0..1.0).contains(&cfg.missing.rate) {
        return contract(format!("missing rate {} outside [0, 1)", cfg.missing.rate));
    }
    if !(0.0..1.0).contains(&cfg.ar_rho.abs()) || cfg.noise_std < 0.0 || cfg.phase_jitter < 0.0 {
        return contract("noise needs |rho| < 1 and non-negative scales");
    }
    if !(0.0..=1.0).contains(&cfg.noise_cross_corr) {
        return contract(format!("noise cross-correlation {} outside [0, 1]", cfg.noise_cross_corr));
    }
    let signal: Vec<bool> = match &cfg.signal_features {
        Some(f) => (0..d).map(|j| f.contains(&j)).collect(),
        None => (0..d).map(|j| j % 2 == 0).collect(),
    };
    let times: Vec<f64> = (0..t_len)
        .map(|k| if t_len == 1 { 0.0 } else { k as f64 / (t_len - 1) as f64 })
        .collect();
    let centre = (classes - 1) as f64 / 2.0;
    let innov = (1.0 - cfg.ar_rho * cfg.ar_rho).sqrt() * cfg.noise_std;
    let (shared, own) = (cfg.noise_cross_corr.sqrt(), (1.0 - cfg.noise_cross_corr).sqrt());
    let tau = std::f64::consts::TAU;
    let mut r = rng::derive(cfg.seed, Stream::Data, &[u64::MAX]);
    let base_phase: Vec<f64> = (0..d).map(|_| r.random_range(0.0..tau)).collect();

    let mut complete = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::derive(cfg.seed, Stream::Data, &[i as u64, 0]);
        let y = r.random_range(0..classes);
        let step = y as f64 - centre;
        let mut values = vec![0.0; t_len * d];
        // innovations: a common draw per step mixed into every feature
        let mut w = vec![0.0; t_len * d];
        for k in 0..t_len {
            let c: f64 = StandardNormal.sample(&mut r);
            for j in 0..d {
                let o: f64 = StandardNormal.sample(&mut r);
                w[k * d + j] = shared * c + own * o;
            }
        }
        for j in 0..d {
            let jitter: f64 = StandardNormal.sample(&mut r);
            let base_freq = 1.0 + (j % 3) as f64;
            let (freq, level, phase) = if signal[j] {
                (
                    base_freq + cfg.class_freq * y as f64,
                    cfg.class_offset * step,
                    base_phase[j] + cfg.class_phase * step,
                )
            } else {
                (base_freq, 0.0, base_phase[j])
            };
            let phase = phase + cfg.phase_jitter * jitter;
            let mut e = cfg.noise_std * w[j];
            for (k, &t) in times.iter().enumerate() {
                if k > 0 {
                    e = cfg.ar_rho * e + innov * w[k * d + j];
                }
                values[k * d + j] = (tau * freq * t + phase).sin() + level + e;
            }
        }
        let mut r = rng::derive(cfg.seed, Stream::Data, &[i as u64, 1]);
        let mask: Vec<bool> = (0..t_len * d)
            .map(|c| {
                let (k, j) = (c / d, c % d);
                let p = cfg.missing.drop_probability(values[c], values[k * d + (j + 1) % d]);
                r.random::<f64>() >= p
            })
            .collect();
        complete.push((format!("s{i:05}"), values, y));
        masks.push(mask);
    }
    // Every feature must be observed somewhere in the dataset.
    for j in 0..d {
        if !masks.iter().any(|m| (0..t_len).any(|k| m[k * d + j])) {
            masks[0][j] = true;
        }
    }

    let names: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    let mut masked_series = Vec::with_capacity(n);
    let mut full_series = Vec::with_capacity(n);
    for ((id, values, y), mask) in complete.into_iter().zip(masks) {
        masked_series.push(MaskedTimeSeries::new(id.clone(), times.clone(), values.clone(), mask, d, Some(y))?);
        full_series.push(MaskedTimeSeries::new(id, times.clone(), values, vec![true; t_len * d], d, Some(y))?);
    }
    Ok(SyntheticData {
        masked: Dataset::new(masked_series, names.clone(), Split::All)?,
        complete: Dataset::new(full_series, names, Split::All)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mechanism: Mechanism, rate: f64) -> SyntheticConfig {
        SyntheticConfig {
            n: 250,
            t_len: 40,
            d: 6,
            missing: MissingMechanismConfig {
                mechanism,
                rate,
                ..Default::default()
            },
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn mcar_rate_matches() {
        let data = generate_synthetic(&cfg(Mechanism::Mcar, 0.3)).unwrap();
        assert!((data.masked.missing_rate() - 0.3).abs() < 0.01, "{}", data.masked.missing_rate());
    }

    #[test]
    fn rate_zero_observes_everything() {
        for m in [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar] {
            let data = generate_synthetic(&cfg(m, 0.0)).unwrap();
            assert_eq!(data.masked, data.complete);
        }
    }

    #[test]
    fn noise_is_correlated_across_features() {
        let c = SyntheticConfig {
            n: 400,
            classes: 1,
            phase_jitter: 0.0,
            noise_cross_corr: 0.5,
            missing: MissingMechanismConfig {
                rate: 0.0,
                ..Default::default()
            },
            ..cfg(Mechanism::Mcar, 0.0)
        };
        let data = generate_synthetic(&c).unwrap();
        let cells = data.complete.series[0].mask().len();
        // one class and no jitter: every series shares the signal, so the
        // residual from the cross-series mean is noise
        let mut mean = vec![0.0; cells];
        for s in &data.complete.series {
            for (m, v) in mean.iter_mut().zip(s.zero_filled()) {
                *m += v / c.n as f64;
            }
        }
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for s in &data.complete.series {
            for k in 0..c.t_len {
                let a = s.zero_filled()[k * c.d] - mean[k * c.d];
                let b = s.zero_filled()[k * c.d + 1] - mean[k * c.d + 1];
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
            }
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!((corr - 0.5).abs() < 0.05, "{corr}");
        assert!(((sxx / (c.n * c.t_len) as f64).sqrt() - c.noise_std).abs() < 0.05);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(Mechanism::Mnar, 0.4);
        assert_eq!(generate_synthetic(&c).unwrap(), generate_synthetic(&c).unwrap());
    }
}
