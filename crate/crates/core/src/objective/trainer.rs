use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Ablation;
use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::metrics::{accuracy_precision_recall, argmax, auroc};
use crate::numerics::{AdamWConfig, AdamWState, ParamStore, Tensor};
use crate::rng::{self, Rng, Stream};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Resample minority classes with replacement up to the majority count
    /// each epoch.
    pub oversample: bool,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 0.0,
            max_epochs: 100,
            patience: 20,
            oversample: false,
            seed: 0,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return contract("batch size and patience must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return contract("learning rate must be positive and weight decay non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

/// Identifies one minibatch so that every random draw inside it can be
/// re-derived, which makes runs and resumed runs reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchCtx {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl BatchCtx {
    pub fn rng(&self, stream: Stream, item: u64) -> Rng {
        rng::derive(self.seed, stream, &[self.epoch, self.batch, item])
    }
}

/// A classifier that can be fitted by [`fit`].
pub trait Trainable<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn n_classes(&self) -> usize;
    /// Mean loss over `batch` (indices into `ds`) and its gradient, one
    /// tensor per parameter in store order.
    fn loss_and_grads(&self, ds: &Dataset, batch: &[usize], ctx: BatchCtx) -> Result<(f64, Vec<Tensor<T>>)>;
    /// Predictive class distributions, one per series.
    fn predict_proba(&self, ds: &Dataset, seed: u64) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
    pub wall_time: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainState<T> {
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore<T>,
    pub optim: AdamWState<T>,
    pub best: ParamStore<T>,
    pub best_metric: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub stopped: bool,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: &ParamStore<T>, tc: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            params: params.clone(),
            optim: AdamWState::new(params, tc.adamw()),
            best: params.clone(),
            best_metric: None,
            best_epoch: 0,
            bad_epochs: 0,
            stopped: false,
            history: Vec::new(),
        }
    }
}

/// AUROC for two classes (accuracy if a class is absent), accuracy
/// otherwise. `None` when no series carries a label.
pub fn validation_metric(probs: &[Vec<f64>], labels: &[Option<usize>], n_classes: usize) -> Option<f64> {
    let (p, y): (Vec<&Vec<f64>>, Vec<usize>) = probs
        .iter()
        .zip(labels)
        .filter_map(|(p, l)| l.map(|l| (p, l)))
        .unzip();
    if y.is_empty() {
        return None;
    }
    if n_classes == 2 {
        let scores: Vec<f64> = p.iter().map(|p| p[1]).collect();
        let pos: Vec<bool> = y.iter().map(|&l| l == 1).collect();
        if let Ok(a) = auroc(&scores, &pos) {
            return Some(a);
        }
    }
    let preds: Vec<usize> = p.iter().map(|p| argmax(p)).collect();
    accuracy_precision_recall(&preds, &y, n_classes).ok().map(|r| r.0)
}

/// Visit order for one epoch: shuffled, with optional class balancing.
pub fn epoch_order(ds: &Dataset, tc: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut rng = rng::derive(tc.seed, Stream::Shuffle, &[epoch as u64]);
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    if tc.oversample {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
        for (i, s) in ds.series.iter().enumerate() {
            if let Some(y) = s.label {
                by_class[y].push(i);
            }
        }
        let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
        for members in by_class.iter().filter(|m| !m.is_empty()) {
            for _ in members.len()..target {
                idx.push(members[rng.random_range(0..members.len())]);
            }
        }
    }
    idx.shuffle(&mut rng);
    idx
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { epoch },
        e => e,
    }
}

/// Minibatch AdamW with early stopping on the validation metric.
///
/// `resume` continues from a saved state; `on_epoch` runs after every
/// epoch (logging, checkpointing). On return the model holds the
/// best-validation parameters. A non-finite loss or gradient aborts with
/// [`Error::Divergence`], leaving the model at its last finite parameters.
pub fn fit<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    train: &Dataset,
    val: &Dataset,
    tc: &TrainConfig,
    resume: Option<TrainState<T>>,
    mut on_epoch: impl FnMut(&TrainState<T>, &EpochRecord) -> Result<()>,
) -> Result<TrainState<T>> {
    tc.validate()?;
    if train.is_empty() {
        return contract("training split is empty");
    }
    let mut state = match resume {
        Some(s) => {
            model.params_mut().load_from(&s.params)?;
            s
        }
        None => TrainState::new(model.params(), tc),
    };
    let val_labels = val.labels();
    while state.epoch < tc.max_epochs && !state.stopped {
        let epoch = state.epoch;
        let start = Instant::now();
        let order = epoch_order(train, tc, epoch);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let ctx = BatchCtx {
                seed: tc.seed,
                epoch: epoch as u64,
                batch: b as u64,
            };
            let (loss, grads) = model.loss_and_grads(train, chunk, ctx).map_err(|e| diverged(e, epoch))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            state.optim.step(model.params_mut(), &grads).map_err(|e| diverged(e, epoch))?;
            total += loss * chunk.len() as f64;
        }
        let metric = if val.is_empty() {
            None
        } else {
            let probs = model.predict_proba(val, rng::derive(tc.seed, Stream::Eval, &[epoch as u64]).random())?;
            validation_metric(&probs, &val_labels, model.n_classes())
        };
        state.epoch += 1;
        state.params = model.params().clone();
        let improved = match (metric, state.best_metric) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some(m), Some(best)) => m > best,
        };
        if improved {
            state.best = state.params.clone();
            state.best_metric = metric;
            state.best_epoch = state.epoch;
            state.bad_epochs = 0;
        } else {
            state.bad_epochs += 1;
            state.stopped = state.bad_epochs >= tc.patience;
        }
        let record = EpochRecord {
            epoch: state.epoch,
            loss: total / order.len() as f64,
            val_metric: metric,
            wall_time: start.elapsed().as_secs_f64(),
        };
        state.history.push(record.clone());
        on_epoch(&state, &record)?;
    }
    model.params_mut().load_from(&state.best)?;
    Ok(state)
}
