use serde::{Deserialize, Serialize};

use super::weights::{bound_sum, log_weight_var, parts, SamplingConfig};
use super::{Ablation, BatchCtx, Trainable};
use crate::data::{Dataset, MaskedTimeSeries};
use crate::error::{contract, Result};
use crate::inference::snis_predict_dataset;
use crate::model::{group_by_grid, ModelParams, ParticleNoise, PriorCache};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::rng::Stream;
use crate::Scalar;

/// Stacked rows allowed on one training tape.
const MAX_ROWS: usize = 8_192;

/// The generative classifier with its sampling settings and ablation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SupnotMiwae<T: Scalar> {
    pub model: ModelParams<T>,
    pub sampling: SamplingConfig,
    pub ablation: Ablation,
}

impl<T: Scalar> SupnotMiwae<T> {
    pub fn new(model: ModelParams<T>, sampling: SamplingConfig, ablation: Ablation) -> Result<Self> {
        sampling.validate()?;
        Ok(Self {
            model,
            sampling,
            ablation,
        })
    }

    /// Dropout rate applied while training; zero when ObsDropout is ablated.
    pub fn train_beta(&self) -> f64 {
        if self.ablation.obs_dropout {
            self.sampling.beta
        } else {
            0.0
        }
    }

    pub fn test_beta(&self) -> f64 {
        if self.ablation.obs_dropout {
            self.sampling.prediction_beta()
        } else {
            0.0
        }
    }

    /// Sum over `batch` of the bound averaged over `S` outer samples, and
    /// its gradient. Series at batch position `p` draws noise from
    /// `ctx.rng(_, p)`.
    pub fn bound_and_grads(&self, ds: &Dataset, batch: &[usize], ctx: BatchCtx) -> Result<(f64, Vec<Tensor<T>>)> {
        let (k, s) = (self.sampling.k_train, self.sampling.s_train);
        let cfg = &self.model.config;
        let beta = self.train_beta();
        let store = &self.model.store;
        let mut grads: Vec<Tensor<T>> = store.entries().iter().map(|e| Tensor::zeros(e.value.rows(), e.value.cols())).collect();
        let mut total = 0.0;
        let mut cache = PriorCache::new();
        let positions: Vec<usize> = (0..batch.len()).collect();
        let view = ds.subset(batch, ds.split);
        for group in group_by_grid(&view, &positions) {
            let t_len = view.series[group[0]].len();
            let chol = cache.get(view.series[group[0]].times(), &self.model)?;
            let per_chunk = (MAX_ROWS / (k * s * t_len)).max(1);
            for chunk in group.chunks(per_chunk) {
                let series: Vec<&MaskedTimeSeries> = chunk.iter().map(|&p| &view.series[p]).collect();
                let labels = if self.ablation.supervision {
                    let l: Option<Vec<usize>> = series.iter().map(|s| s.label).collect();
                    match l {
                        Some(l) => Some(l),
                        None => return contract("supervised training needs a label on every series"),
                    }
                } else {
                    None
                };
                let noise: Vec<ParticleNoise<T>> = chunk
                    .iter()
                    .map(|&p| {
                        ParticleNoise::draw(
                            k * s,
                            t_len,
                            cfg.z_dim,
                            cfg.n_features,
                            beta,
                            &mut ctx.rng(Stream::Particles, p as u64),
                            &mut ctx.rng(Stream::Dropout, p as u64),
                        )
                    })
                    .collect::<Result<_>>()?;
                let refs: Vec<&ParticleNoise<T>> = noise.iter().collect();
                let mut g = Graph::new();
                let vars = self.model.particle_forward(&mut g, &series, &refs, chol.clone(), parts(self.ablation))?;
                let lw = log_weight_var(&mut g, &self.model, &vars, labels.as_deref(), self.ablation)?;
                let sum = bound_sum(&mut g, lw, chunk.len(), s, k)?;
                let obj = g.scale(sum, T::lit(1.0 / s as f64));
                total += g.value(obj).data()[0].f64();
                let gr = g.backward(obj)?;
                for (acc, gi) in grads.iter_mut().zip(gr.params(store)) {
                    acc.add_assign(&gi);
                }
            }
        }
        Ok((total, grads))
    }

    /// Class probabilities with `K_test` particles and `S_test` outer samples.
    pub fn predict(&self, ds: &Dataset, seed: u64) -> Result<Vec<Vec<f64>>> {
        let sp = &self.sampling;
        Ok(snis_predict_dataset(&self.model, ds, sp.k_test, sp.s_test, self.test_beta(), seed)?
            .into_iter()
            .map(|p| p.probs)
            .collect())
    }
}

impl<T: Scalar> Trainable<T> for SupnotMiwae<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.model.store
    }

    fn n_classes(&self) -> usize {
        self.model.config.n_classes
    }

    /// Negative bound averaged over the batch.
    fn loss_and_grads(&self, ds: &Dataset, batch: &[usize], ctx: BatchCtx) -> Result<(f64, Vec<Tensor<T>>)> {
        let (b, mut grads) = self.bound_and_grads(ds, batch, ctx)?;
        let n = batch.len() as f64;
        let k = T::lit(-1.0 / n);
        for gr in grads.iter_mut() {
            gr.scale_assign(k);
        }
        Ok((-b / n, grads))
    }

    /// Validation uses a single outer sample.
    fn predict_proba(&self, ds: &Dataset, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(snis_predict_dataset(&self.model, ds, self.sampling.k_test, 1, self.test_beta(), seed)?
            .into_iter()
            .map(|p| p.probs)
            .collect())
    }
}
