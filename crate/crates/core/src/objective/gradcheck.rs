use serde::{Deserialize, Serialize};

use super::generative::SupnotMiwae;
use super::weights::SamplingConfig;
use super::{Ablation, BatchCtx, Trainable};
use crate::data::{generate_synthetic, Dataset, MissingMechanismConfig, SyntheticConfig};
use crate::error::Result;
use crate::model::{KernelConfig, ModelConfig, ModelParams};
use crate::numerics::{ParamGroup, Tensor};
use crate::rng::{self, Stream};
use rand::Rng as _;

/// Largest relative error between the tape gradient and a five-point
/// central difference, per parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Every checked analytic entry was exactly zero.
    pub all_zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn group(&self, group: ParamGroup) -> Option<&GroupCheck> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Relative error with an absolute floor so that entries near zero are
/// compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs())).max(floor)
}

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_FLOOR: f64 = 1e-4;

/// Compares `loss_and_grads` against finite differences of the loss on
/// up to `per_tensor` randomly chosen entries of each parameter tensor.
pub fn gradient_check(
    model: &SupnotMiwae<f64>,
    ds: &Dataset,
    batch: &[usize],
    ctx: BatchCtx,
    per_tensor: usize,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grads(ds, batch, ctx)?;
    let mut probe = model.clone();
    let mut pick = rng::derive(ctx.seed, Stream::Eval, &[u64::MAX]);
    let mut groups: Vec<GroupCheck> = Vec::new();
    let h = GRADCHECK_STEP;
    let ids: Vec<_> = model.model.store.ids().collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let group = model.model.store.group(id);
        let n = grad.len();
        let entries: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        let entry = match groups.iter().position(|g| g.group == group) {
            Some(i) => i,
            None => {
                groups.push(GroupCheck {
                    group,
                    checked: 0,
                    max_rel_err: 0.0,
                    all_zero: true,
                });
                groups.len() - 1
            }
        };
        for e in entries {
            let base = model.model.store.get(id).data()[e];
            let mut at = |delta: f64| -> Result<f64> {
                probe.model.store.get_mut(id).data_mut()[e] = base + delta;
                Ok(probe.loss_and_grads(ds, batch, ctx)?.0)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            probe.model.store.get_mut(id).data_mut()[e] = base;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = grad.data()[e];
            let gc = &mut groups[entry];
            gc.checked += 1;
            gc.all_zero &= a == 0.0;
            gc.max_rel_err = gc.max_rel_err.max(relative_error(a, numeric, GRADCHECK_FLOOR));
        }
    }
    Ok(GradCheckReport { step: h, groups })
}

/// A tiny instance (`T = 8`, `d = 3`, latent width 4, three particles)
/// with parameters jittered away from their initial values.
pub fn tiny_instance(seed: u64, ablation: Ablation) -> Result<(SupnotMiwae<f64>, Dataset)> {
    let data = generate_synthetic(&SyntheticConfig {
        n: 4,
        t_len: 8,
        d: 3,
        missing: MissingMechanismConfig {
            rate: 0.3,
            ..Default::default()
        },
        seed,
        ..Default::default()
    })?;
    let config = ModelConfig {
        n_features: 3,
        n_classes: 2,
        z_dim: 4,
        hidden: 8,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        cls_layers: 1,
        conv_width: 3,
        conv_channels: 4,
        mis_hidden: 4,
        kernel: KernelConfig::default(),
        online: false,
    };
    let mut params = ModelParams::<f64>::new(config, seed)?;
    let mut r = rng::derive(seed, Stream::Init, &[1]);
    for id in params.store.ids().collect::<Vec<_>>() {
        let t: &mut Tensor<f64> = params.store.get_mut(id);
        for v in t.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    let sampling = SamplingConfig {
        k_train: 3,
        s_train: 1,
        k_test: 3,
        s_test: 1,
        beta: 0.3,
        test_beta: None,
    };
    Ok((SupnotMiwae::new(params, sampling, ablation)?, data.masked))
}
