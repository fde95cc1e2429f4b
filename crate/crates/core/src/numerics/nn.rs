//! Layers built on the tape: linear maps, MLPs, temporal convolution and
//! transformer blocks.

use rand::Rng;

use super::graph::{Graph, Var};
use super::kernels;
use super::params::{ParamGroup, ParamId, ParamStore};
use super::tensor::{matmul, Tensor};
use crate::error::{contract, Result};
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_weight(format!("{name}.weight"), group, inputs, outputs, rng);
        let b = store.add(format!("{name}.bias"), group, Tensor::zeros(1, outputs));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Var {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.gelu(x);
            }
            x = layer.forward(g, store, x);
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, group: ParamGroup, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), group, Tensor::full(1, width, T::one()));
        let beta = store.add(format!("{name}.beta"), group, Tensor::zeros(1, width));
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Temporal convolution: `width`-tap filters over `[batch·T, c_in]` input.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub proj: Linear,
    pub width: usize,
}

/// Zero positions padded before each series.
pub fn conv_left_pad(width: usize, causal: bool) -> usize {
    if causal {
        width - 1
    } else {
        (width - 1) / 2
    }
}

impl Conv1d {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        outputs: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        assert!(width >= 1, "kernel width must be at least 1");
        let proj = Linear::new(store, name, group, width * inputs, outputs, rng);
        Self { proj, width }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        batch: usize,
        causal: bool,
    ) -> Var {
        let cols = g.im2col(x, batch, self.width, conv_left_pad(self.width, causal));
        self.proj.forward(g, store, cols)
    }
}

/// Post-norm transformer block: multi-head self-attention, residual,
/// layer norm, two-layer feed-forward, residual, layer norm.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub heads: usize,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        width: usize,
        ffn_width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(width % heads == 0, "width must split evenly across heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), group, width, width, rng),
            k: Linear::new(store, &format!("{name}.k"), group, width, width, rng),
            v: Linear::new(store, &format!("{name}.v"), group, width, width, rng),
            o: Linear::new(store, &format!("{name}.o"), group, width, width, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), group, width),
            ff1: Linear::new(store, &format!("{name}.ff1"), group, width, ffn_width, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), group, ffn_width, width, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), group, width),
            heads,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        batch: usize,
        causal: bool,
    ) -> Var {
        let q = self.q.forward(g, store, x);
        let k = self.k.forward(g, store, x);
        let v = self.v.forward(g, store, x);
        let a = g.attention(q, k, v, batch, self.heads, causal);
        let o = self.o.forward(g, store, a);
        let r1 = g.add(x, o);
        let x1 = self.norm1.forward(g, store, r1);
        let f = self.ff1.forward(g, store, x1);
        let f = g.gelu(f);
        let f = self.ff2.forward(g, store, f);
        let r2 = g.add(x1, f);
        self.norm2.forward(g, store, r2)
    }
}

/// Sinusoidal encoding of position indices, `[t_len, width]`.
pub fn positional_encoding<T: Scalar>(t_len: usize, width: usize) -> Tensor<T> {
    Tensor::from_fn(t_len, width, |t, c| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / width as f64);
        T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Single-head causal scaled dot-product attention on `[T, h]` inputs:
/// position `t` attends to positions `≤ t` only.
pub fn causal_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    if q.shape().len() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return contract(format!(
            "attention shapes differ: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if q.rows() == 0 || q.cols() == 0 {
        return contract("attention over an empty sequence");
    }
    Ok(kernels::attention_forward(q, k, v, 1, 1, true).0)
}

/// A temporal filter bank: `weights` is `[width·c_in, c_out]`, tap-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<T> {
    pub width: usize,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Convolution along time of a `[T, d]` series.
pub fn conv1d_time<T: Scalar>(x: &Tensor<T>, filters: &FilterBank<T>, causal: bool) -> Result<Tensor<T>> {
    let w = filters.width;
    if w == 0 {
        return contract("kernel width must be at least 1");
    }
    let padded = x.rows() + w - 1;
    if w > padded || x.rows() == 0 {
        return contract(format!("kernel width {w} exceeds padded sequence length {padded}"));
    }
    if filters.weights.rows() != w * x.cols() || filters.bias.len() != filters.weights.cols() {
        return contract("filter bank shape does not match input width");
    }
    let cols = kernels::im2col(x, 1, w, conv_left_pad(w, causal));
    let mut out = matmul(&cols, &filters.weights);
    let c = out.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = *v + filters.bias[i % c];
    }
    Ok(out)
}
