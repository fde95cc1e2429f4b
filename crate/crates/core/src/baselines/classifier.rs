use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gru::{decay, DecayParams, GruLayer};
use super::impute::{compute_intervals, impute_forward, impute_mean, last_observed};
use crate::data::{Dataset, FeatureStats};
use crate::error::{contract, Error, Result};
use crate::metrics::MetricsReport;
use crate::numerics::nn::Linear;
use crate::numerics::{Graph, ParamGroup, ParamStore, Tensor, Var};
use crate::objective::{fit, BatchCtx, TrainConfig, Trainable};
use crate::rng::{self, Stream};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Zero,
    Mean,
    Forward,
    Simple,
    Grud,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::Zero, Self::Mean, Self::Forward, Self::Simple, Self::Grud];

    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "gru-zero",
            Self::Mean => "gru-mean",
            Self::Forward => "gru-forward",
            Self::Simple => "gru-simple",
            Self::Grud => "gru-d",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let key = key.strip_prefix("gru-").or_else(|| key.strip_prefix("gru_")).unwrap_or(&key);
        match key {
            "zero" => Ok(Self::Zero),
            "mean" => Ok(Self::Mean),
            "forward" => Ok(Self::Forward),
            "simple" => Ok(Self::Simple),
            "d" | "grud" => Ok(Self::Grud),
            _ => Err(Error::UnknownVariant(format!("baseline `{s}`"))),
        }
    }
}

/// Heuristic imputation feeding GRU-simple.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimpleImpute {
    #[default]
    Forward,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub simple_impute: SimpleImpute,
    /// Attach the head to every step (training averages the per-step
    /// losses; predictions read the last step).
    pub online: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Zero,
            hidden: 64,
            simple_impute: SimpleImpute::Forward,
            online: false,
        }
    }
}

/// A GRU over (imputed) inputs with a linear-softmax head.
#[derive(Clone, Debug)]
pub struct GruClassifier<T> {
    pub config: BaselineConfig,
    pub n_features: usize,
    pub n_classes: usize,
    pub stats: FeatureStats,
    pub store: ParamStore<T>,
    gru: GruLayer,
    head: Linear,
    decay: Option<DecayParams>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct GruFile<T> {
    config: BaselineConfig,
    n_features: usize,
    n_classes: usize,
    stats: FeatureStats,
    params: ParamStore<T>,
}

impl<T: Scalar> Serialize for GruClassifier<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GruFile {
            config: self.config.clone(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            stats: self.stats.clone(),
            params: self.store.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for GruClassifier<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = GruFile::<T>::deserialize(d)?;
        Self::from_store(f.config, f.n_features, f.n_classes, f.stats, &f.params).map_err(serde::de::Error::custom)
    }
}

/// Index lists of equal series length, in order of first appearance.
fn group_by_len(ds: &Dataset, idx: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        let t = ds.series[i].len();
        let g = groups.entry(t).or_default();
        if g.is_empty() {
            order.push(t);
        }
        g.push(i);
    }
    order.into_iter().map(|t| groups.remove(&t).unwrap()).collect()
}

impl<T: Scalar> GruClassifier<T> {
    pub fn new(config: BaselineConfig, n_features: usize, n_classes: usize, stats: FeatureStats, seed: u64) -> Self {
        let mut rng = rng::derive(seed, Stream::Init, &[]);
        let mut store = ParamStore::new();
        let g = ParamGroup::Classifier;
        let d = n_features;
        let inputs = match config.variant {
            Variant::Zero | Variant::Mean | Variant::Forward => d,
            Variant::Simple => 3 * d,
            Variant::Grud => 2 * d,
        };
        let decay = (config.variant == Variant::Grud)
            .then(|| DecayParams::new(&mut store, "grud.decay", g, d, config.hidden, &mut rng));
        let gru = GruLayer::new(&mut store, "gru", g, inputs, config.hidden, &mut rng);
        let head = Linear::new(&mut store, "head", g, config.hidden, n_classes, &mut rng);
        Self {
            config,
            n_features,
            n_classes,
            stats,
            store,
            gru,
            head,
            decay,
        }
    }

    /// Rebuilds the layer structure and installs `store`.
    pub fn from_store(
        config: BaselineConfig,
        n_features: usize,
        n_classes: usize,
        stats: FeatureStats,
        store: &ParamStore<T>,
    ) -> Result<Self> {
        let mut m = Self::new(config, n_features, n_classes, stats, 0);
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn input_width(&self) -> usize {
        self.store.get(self.gru.w_x).rows()
    }

    fn heuristic_inputs(&self, ds: &Dataset, idx: &[usize], t_len: usize) -> Tensor<T> {
        let d = self.n_features;
        let b = idx.len();
        let w = self.input_width();
        let mut x = Tensor::zeros(t_len * b, w);
        for (bi, &i) in idx.iter().enumerate() {
            let s = &ds.series[i];
            let vals = match (self.config.variant, self.config.simple_impute) {
                (Variant::Zero, _) => s.zero_filled().to_vec(),
                (Variant::Mean, _) | (Variant::Simple, SimpleImpute::Mean) => impute_mean(s, &self.stats),
                _ => impute_forward(s, &self.stats),
            };
            let delta = (self.config.variant == Variant::Simple).then(|| compute_intervals(s.mask(), s.times(), d));
            for t in 0..t_len {
                let row = t * b + bi;
                for j in 0..d {
                    x.set(row, j, T::lit(vals[t * d + j]));
                    if let Some(delta) = &delta {
                        x.set(row, d + j, T::lit(if s.is_observed(t, j) { 1.0 } else { 0.0 }));
                        x.set(row, 2 * d + j, T::lit(delta.at(t, j)));
                    }
                }
            }
        }
        x
    }

    /// Decayed GRU-D inputs `[x̂, s]` and hidden decays, rows `t·B + b`.
    fn grud_inputs(&self, g: &mut Graph<T>, ds: &Dataset, idx: &[usize], t_len: usize) -> (Var, Var) {
        let p = self.decay.as_ref().expect("GRU-D decay parameters");
        let d = self.n_features;
        let b = idx.len();
        let rows = t_len * b;
        let mut xs = Tensor::zeros(rows, d);
        let mut s = Tensor::zeros(rows, d);
        let mut miss = Tensor::zeros(rows, d);
        let mut gap = Tensor::zeros(rows, d);
        let mut delta = Tensor::zeros(rows, d);
        let mean = &self.stats.mean;
        for (bi, &i) in idx.iter().enumerate() {
            let series = &ds.series[i];
            let (x_last, _) = last_observed(series.zero_filled(), series.mask(), d, mean);
            let iv = compute_intervals(series.mask(), series.times(), d);
            for t in 0..t_len {
                let row = t * b + bi;
                for j in 0..d {
                    let c = t * d + j;
                    let obs = series.mask()[c];
                    xs.set(row, j, T::lit(if obs { series.zero_filled()[c] } else { 0.0 }));
                    s.set(row, j, T::lit(if obs { 1.0 } else { 0.0 }));
                    miss.set(row, j, T::lit(if obs { 0.0 } else { 1.0 }));
                    gap.set(row, j, T::lit(x_last[c] - mean[j]));
                    delta.set(row, j, T::lit(iv.at(t, j)));
                }
            }
        }
        let mean_rows = Tensor::from_fn(rows, d, |_, j| T::lit(mean[j]));
        let (xs, s, miss, gap, delta, mean_rows) = (
            g.constant(xs),
            g.constant(s),
            g.constant(miss),
            g.constant(gap),
            g.constant(delta),
            g.constant(mean_rows),
        );
        let (wx, bx, wh, bh) = (
            g.param(&self.store, p.w_x),
            g.param(&self.store, p.b_x),
            g.param(&self.store, p.w_h),
            g.param(&self.store, p.b_h),
        );
        // x̂ = s⊙x + (1−s)⊙(x̄ + γ⊙(x_last − x̄))
        let pre = g.mul_row(delta, wx);
        let pre = g.add_row(pre, bx);
        let gamma_x = decay(g, pre);
        let pull = g.mul(gamma_x, gap);
        let fill = g.add(mean_rows, pull);
        let fill = g.mul(miss, fill);
        let x_hat = g.add(xs, fill);
        let input = g.concat_cols(&[x_hat, s]);
        let pre_h = g.matmul(delta, wh);
        let pre_h = g.add_row(pre_h, bh);
        (input, decay(g, pre_h))
    }

    /// Log-probabilities `[B, C]` per scored step (the last step, or every
    /// step in online mode) for equal-length series `idx`.
    fn forward(&self, g: &mut Graph<T>, ds: &Dataset, idx: &[usize]) -> Vec<Var> {
        let t_len = ds.series[idx[0]].len();
        let b = idx.len();
        let (input, gamma_h) = if self.decay.is_some() {
            let (x, gh) = self.grud_inputs(g, ds, idx, t_len);
            (x, Some(gh))
        } else {
            let x = self.heuristic_inputs(ds, idx, t_len);
            (g.constant(x), None)
        };
        let xw = self.gru.project(g, &self.store, input);
        let mut h = g.constant(Tensor::zeros(b, self.config.hidden));
        let mut out = Vec::new();
        for t in 0..t_len {
            let rows: Vec<usize> = (t * b..(t + 1) * b).collect();
            if let Some(gh) = gamma_h {
                let gt = g.select_rows(gh, rows.clone());
                h = g.mul(gt, h);
            }
            let xt = g.select_rows(xw, rows);
            h = self.gru.step(g, &self.store, xt, h);
            if self.config.online || t + 1 == t_len {
                let logits = self.head.forward(g, &self.store, h);
                out.push(g.log_softmax_rows(logits));
            }
        }
        out
    }
}

impl<T: Scalar> Trainable<T> for GruClassifier<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn loss_and_grads(&self, ds: &Dataset, batch: &[usize], _ctx: BatchCtx) -> Result<(f64, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let mut terms = Vec::new();
        for group in group_by_len(ds, batch) {
            let labels: Vec<usize> = group
                .iter()
                .map(|&i| ds.series[i].label.ok_or_else(|| Error::Contract(format!("series `{}` has no label", ds.series[i].id))))
                .collect::<Result<_>>()?;
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.n_classes) {
                return contract(format!("label {bad} out of range for {} classes", self.n_classes));
            }
            let steps = self.forward(&mut g, ds, &group);
            let scale = -1.0 / (batch.len() * steps.len()) as f64;
            for lp in steps {
                let picked = g.pick_cols(lp, labels.clone());
                let s = g.sum(picked);
                terms.push(g.scale(s, T::lit(scale)));
            }
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t);
        }
        let value = g.value(loss).item().f64();
        let grads = g.backward(loss)?;
        Ok((value, grads.params(&self.store)))
    }

    fn predict_proba(&self, ds: &Dataset, _seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); ds.len()];
        let all: Vec<usize> = (0..ds.len()).collect();
        for group in group_by_len(ds, &all) {
            for chunk in group.chunks(256) {
                let mut g = Graph::new();
                let steps = self.forward(&mut g, ds, chunk);
                let last = g.value(*steps.last().expect("at least one step"));
                for (r, &i) in chunk.iter().enumerate() {
                    out[i] = last.row_slice(r).iter().map(|v| v.f64().exp()).collect();
                }
            }
        }
        Ok(out)
    }
}

/// Trains a baseline on `train` (early stopping on `val`) and reports
/// test metrics.
pub fn run_baseline_classifier<T: Scalar>(
    config: &BaselineConfig,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    tc: &TrainConfig,
) -> Result<(GruClassifier<T>, MetricsReport)> {
    let stats = match &train.stats {
        Some(s) => s.clone(),
        None => FeatureStats::fit(train)?,
    };
    let n_classes = train.n_classes().max(val.n_classes()).max(test.n_classes()).max(2);
    let mut model = GruClassifier::new(config.clone(), train.n_features(), n_classes, stats, tc.seed);
    fit(&mut model, train, val, tc, None, |_, _| Ok(()))?;
    let report = evaluate_classifier(&model, test, tc.seed)?;
    Ok((model, report))
}

/// Test metrics for any trained classifier on labeled series.
pub fn evaluate_classifier<T: Scalar, M: Trainable<T>>(model: &M, test: &Dataset, seed: u64) -> Result<MetricsReport> {
    let probs = model.predict_proba(test, seed)?;
    let labels: Vec<usize> = test
        .series
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Contract(format!("test series `{}` has no label", s.id))))
        .collect::<Result<_>>()?;
    let mut report = MetricsReport::from_predictions(&probs, &labels)?;
    report.seed = Some(seed);
    Ok(report)
}
