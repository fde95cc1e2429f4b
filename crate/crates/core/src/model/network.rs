use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::KernelConfig;
use crate::error::{contract, Result};
use crate::numerics::nn::{positional_encoding, Conv1d, Linear, Mlp, TransformerBlock};
use crate::numerics::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::rng::{self, Stream};
use crate::Scalar;

/// Floor added to every softplus standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_features: usize,
    pub n_classes: usize,
    pub z_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub cls_layers: usize,
    pub conv_width: usize,
    pub conv_channels: usize,
    pub mis_hidden: usize,
    pub kernel: KernelConfig,
    /// Causal classifier with a prediction at every step.
    pub online: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_features: 1,
            n_classes: 2,
            z_dim: 32,
            hidden: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            cls_layers: 1,
            conv_width: 3,
            conv_channels: 64,
            mis_hidden: 64,
            kernel: KernelConfig::default(),
            online: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let sizes = [
            self.n_features,
            self.n_classes,
            self.z_dim,
            self.hidden,
            self.heads,
            self.conv_width,
            self.conv_channels,
            self.mis_hidden,
        ];
        if sizes.contains(&0) {
            return contract("model sizes must all be at least 1");
        }
        if self.hidden % self.heads != 0 {
            return contract(format!("hidden width {} does not split into {} heads", self.hidden, self.heads));
        }
        Ok(())
    }
}

fn blocks<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    group: ParamGroup,
    cfg: &ModelConfig,
    n: usize,
    rng: &mut R,
) -> Vec<TransformerBlock> {
    (0..n)
        .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), group, cfg.hidden, 2 * cfg.hidden, cfg.heads, rng))
        .collect()
}

fn add_positions<T: Scalar>(g: &mut Graph<T>, h: Var, batch: usize) -> Var {
    let rows = g.value(h).rows();
    let width = g.value(h).cols();
    let pe = positional_encoding::<T>(rows / batch, width).tile_rows(batch);
    let pe = g.constant(pe);
    g.add(h, pe)
}

fn run_blocks<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    blocks: &[TransformerBlock],
    mut h: Var,
    batch: usize,
    causal: bool,
) -> Var {
    for b in blocks {
        h = b.forward(g, store, h, batch, causal);
    }
    h
}

/// Splits `[rows, 2w]` into a mean and a softplus-floored deviation.
fn gaussian_head<T: Scalar>(g: &mut Graph<T>, out: Var, w: usize) -> (Var, Var) {
    let mu = g.slice_cols(out, 0, w);
    let raw = g.slice_cols(out, w, w);
    (mu, g.positive(raw, SIGMA_FLOOR))
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub conv: Conv1d,
    pub proj: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub head: Mlp,
}

impl Encoder {
    /// `input` is `[batch·T, 2d]` (zero-imputed values and mask).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: Var, batch: usize) -> (Var, Var) {
        let c = self.conv.forward(g, store, input, batch, true);
        let c = g.gelu(c);
        let h = self.proj.forward(g, store, c);
        let h = add_positions(g, h, batch);
        let h = run_blocks(g, store, &self.blocks, h, batch, true);
        let out = self.head.forward(g, store, h);
        let w = g.value(out).cols() / 2;
        gaussian_head(g, out, w)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub input: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub head: Mlp,
}

impl Decoder {
    /// `z` is `[batch·T, z_dim]`; returns `(μ_dec, σ_dec)`, each `[batch·T, d]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var, batch: usize) -> (Var, Var) {
        let h = self.input.forward(g, store, z);
        let h = add_positions(g, h, batch);
        let h = run_blocks(g, store, &self.blocks, h, batch, true);
        let out = self.head.forward(g, store, h);
        let w = g.value(out).cols() / 2;
        gaussian_head(g, out, w)
    }
}

/// Pointwise MLP giving Bernoulli logits of the observation mask.
#[derive(Clone, Debug)]
pub struct MissingModel {
    pub mlp: Mlp,
}

impl MissingModel {
    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        self.mlp.forward(g, store, x)
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub conv: Conv1d,
    pub proj: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub head: Linear,
    /// Diagonal decay of the imputation mix, `[1, d]` each.
    pub decay_w: ParamId,
    pub decay_b: ParamId,
    pub online: bool,
}

impl Classifier {
    /// Log-probabilities: `[batch, C]` read at the last step, or
    /// `[batch·T, C]` for every step in online mode.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x_hat: Var, batch: usize) -> Var {
        let causal = self.online;
        let c = self.conv.forward(g, store, x_hat, batch, causal);
        let c = g.gelu(c);
        let h = self.proj.forward(g, store, c);
        let h = add_positions(g, h, batch);
        let mut h = run_blocks(g, store, &self.blocks, h, batch, causal);
        if !self.online {
            let t_len = g.value(h).rows() / batch;
            h = g.select_rows(h, (0..batch).map(|b| b * t_len + t_len - 1).collect());
        }
        let logits = self.head.forward(g, store, h);
        g.log_softmax_rows(logits)
    }
}

/// All parameters (θ decoder, ψ missingness model, λ classifier and its
/// decay, φ encoder) with the layer structure that indexes them.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub missing: MissingModel,
    pub classifier: Classifier,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derive(seed, Stream::Init, &[]);
        let r = &mut rng;
        let c = &config;
        let (d, h) = (c.n_features, c.hidden);
        let mut store = ParamStore::new();
        let s = &mut store;

        let phi = ParamGroup::Encoder;
        let encoder = Encoder {
            conv: Conv1d::new(s, "enc.conv", phi, 2 * d, c.conv_channels, c.conv_width, r),
            proj: Linear::new(s, "enc.proj", phi, c.conv_channels, h, r),
            blocks: blocks(s, "enc", phi, c, c.enc_layers, r),
            head: Mlp::new(s, "enc.head", phi, &[h, h, 2 * c.z_dim], r),
        };
        let theta = ParamGroup::Generative;
        let decoder = Decoder {
            input: Linear::new(s, "dec.input", theta, c.z_dim, h, r),
            blocks: blocks(s, "dec", theta, c, c.dec_layers, r),
            head: Mlp::new(s, "dec.head", theta, &[h, h, 2 * d], r),
        };
        let missing = MissingModel {
            mlp: Mlp::new(s, "mis", ParamGroup::Missingness, &[d, c.mis_hidden, d], r),
        };
        let lambda = ParamGroup::Classifier;
        let decay_init = Tensor::from_fn(1, d, |_, _| T::lit(r.random_range(0.0..1.0)));
        let classifier = Classifier {
            conv: Conv1d::new(s, "cls.conv", lambda, d, c.conv_channels, c.conv_width, r),
            proj: Linear::new(s, "cls.proj", lambda, c.conv_channels, h, r),
            blocks: blocks(s, "cls", lambda, c, c.cls_layers, r),
            head: Linear::new(s, "cls.head", lambda, h, c.n_classes, r),
            decay_w: s.add("cls.decay.weight", lambda, decay_init),
            decay_b: s.add("cls.decay.bias", lambda, Tensor::zeros(1, d)),
            online: c.online,
        };
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            missing,
            classifier,
        })
    }

    /// Rebuilds the layer structure for `config` and installs `store`.
    pub fn from_store(config: ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.store.load_from(store)?;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ModelFile<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> Serialize for ModelParams<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelFile {
            config: self.config.clone(),
            params: self.store.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for ModelParams<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ModelFile::<T>::deserialize(d)?;
        Self::from_store(f.config, &f.params).map_err(serde::de::Error::custom)
    }
}
