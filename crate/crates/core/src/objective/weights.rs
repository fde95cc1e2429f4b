use serde::{Deserialize, Serialize};

use super::Ablation;
use crate::data::MaskedTimeSeries;
use crate::error::{contract, Result};
use crate::model::{check_finite, prior_cholesky, ForwardParts, ModelParams, ParticleNoise, ParticleVars};
use crate::numerics::{logsumexp, Graph, Var};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub k_train: usize,
    pub s_train: usize,
    pub k_test: usize,
    pub s_test: usize,
    /// ObsDropout rate during training.
    pub beta: f64,
    /// Dropout rate at prediction; `None` reuses `beta`.
    pub test_beta: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k_train: 10,
            s_train: 1,
            k_test: 20,
            s_test: 30,
            beta: 0.3,
            test_beta: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.k_train, self.s_train, self.k_test, self.s_test].contains(&0) {
            return contract("particle and sample counts must be at least 1");
        }
        for b in [Some(self.beta), self.test_beta].into_iter().flatten() {
            if !(0.0..1.0).contains(&b) {
                return contract(format!("dropout rate {b} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn prediction_beta(&self) -> f64 {
        self.test_beta.unwrap_or(self.beta)
    }
}

/// Per-particle log importance weights and their five components.
/// Removed terms (ablations) are identically zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogWeights {
    pub log_w: Vec<f64>,
    /// `log p_λ(y | x̂)`
    pub log_y: Vec<f64>,
    /// `log p_ψ(s | x̃)`
    pub log_s: Vec<f64>,
    /// `log p_θ(x^o | z)`
    pub log_xo: Vec<f64>,
    /// `log p_θ(z)`
    pub log_pz: Vec<f64>,
    /// `log q_φ(z | x^o)`
    pub log_q: Vec<f64>,
}

impl LogWeights {
    /// Components with their sign in `log ω`.
    pub fn components(&self) -> [(&'static str, f64, &[f64]); 5] {
        [
            ("log_y", 1.0, &self.log_y),
            ("log_s", 1.0, &self.log_s),
            ("log_xo", 1.0, &self.log_xo),
            ("log_pz", 1.0, &self.log_pz),
            ("log_q", -1.0, &self.log_q),
        ]
    }
}

/// `log ω` per particle on the tape, `[batch·particles, 1]`.
pub(crate) fn log_weight_var<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    vars: &ParticleVars,
    labels: Option<&[usize]>,
    ablation: Ablation,
) -> Result<Var> {
    check_finite(g, vars.log_q, "log_q")?;
    check_finite(g, vars.log_pz, "log_pz")?;
    check_finite(g, vars.log_xo, "log_xo")?;
    let mut lw = g.sub(vars.log_pz, vars.log_q);
    lw = g.add(lw, vars.log_xo);
    if ablation.mnar {
        let ls = vars.log_s.expect("missingness model was run");
        check_finite(g, ls, "log_s")?;
        lw = g.add(lw, ls);
    }
    if ablation.supervision {
        let Some(labels) = labels else {
            return contract("supervised weights need labels");
        };
        let ly = params.label_term(g, vars, labels)?;
        check_finite(g, ly, "log_y")?;
        lw = g.add(lw, ly);
    }
    Ok(lw)
}

pub(crate) fn parts(ablation: Ablation) -> ForwardParts {
    ForwardParts {
        missing: ablation.mnar,
        classifier: ablation.supervision,
    }
}

/// Sum over series and outer samples of `logsumexp(log ω_{1:K}) − log K`,
/// with particles laid out `[series][sample][k]`.
pub(crate) fn bound_sum<T: Scalar>(g: &mut Graph<T>, lw: Var, batch: usize, samples: usize, k: usize) -> Result<Var> {
    let shift = T::lit(-(k as f64).ln());
    let mut total: Option<Var> = None;
    for b in 0..batch {
        for s in 0..samples {
            let start = (b * samples + s) * k;
            let rows = g.select_rows(lw, (start..start + k).collect());
            let lse = g.logsumexp(rows)?;
            let bound = g.offset(lse, shift);
            total = Some(match total {
                Some(t) => g.add(t, bound),
                None => bound,
            });
        }
    }
    Ok(total.expect("non-empty batch"))
}

/// Builds all `K` particles of one series from `noise` and returns the
/// weights with their component breakdown.
pub fn log_importance_weights<T: Scalar>(
    params: &ModelParams<T>,
    series: &MaskedTimeSeries,
    label: Option<usize>,
    noise: &ParticleNoise<T>,
    ablation: Ablation,
) -> Result<LogWeights> {
    let chol = std::rc::Rc::new(prior_cholesky(series.times(), &params.config.kernel)?);
    let mut g = Graph::new();
    let vars = params.particle_forward(&mut g, &[series], &[noise], chol, parts(ablation))?;
    let labels = label.map(|l| vec![l]);
    let lw = log_weight_var(&mut g, params, &vars, labels.as_deref(), ablation)?;
    let log_y = if ablation.supervision {
        Some(params.label_term(&mut g, &vars, &[label.expect("label checked above")])?)
    } else {
        None
    };
    let col = |v: Option<Var>| -> Vec<f64> {
        match v {
            Some(v) => g.value(v).data().iter().map(|x| x.f64()).collect(),
            None => vec![0.0; noise.particles],
        }
    };
    let log_y = col(log_y);
    Ok(LogWeights {
        log_w: col(Some(lw)),
        log_y,
        log_s: col(if ablation.mnar { vars.log_s } else { None }),
        log_xo: col(Some(vars.log_xo)),
        log_pz: col(Some(vars.log_pz)),
        log_q: col(Some(vars.log_q)),
    })
}

/// `logsumexp(log ω) − log K`.
pub fn iwae_bound(lw: &LogWeights) -> Result<f64> {
    if lw.log_w.is_empty() {
        return contract("at least one particle is required");
    }
    Ok(logsumexp(&lw.log_w)? - (lw.log_w.len() as f64).ln())
}
