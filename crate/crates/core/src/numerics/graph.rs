//! Reverse-mode gradient tape over dense matrices.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep simply walks it in reverse,
//! visiting every node once.

use std::rc::Rc;

use super::density::{clamp_prob, Cholesky, LN_2PI};
use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{contract, Result};
use crate::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Gelu(Var),
    Square(Var),
    SumAll(Var),
    BlockSum(Var, usize),
    LogSumExp(Var),
    LogSoftmaxRows(Var),
    TileRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Rc<Vec<usize>>),
    PickCols(Var, Rc<Vec<usize>>),
    Im2Col {
        x: Var,
        batch: usize,
        width: usize,
        left: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        causal: bool,
        probs: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    GaussLogpdf(Var, Var, Var),
    BernoulliLogpmf {
        logits: Var,
        s: Rc<Tensor<T>>,
    },
    GpPrior {
        z: Var,
        chol: Rc<Cholesky<T>>,
        alpha: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations and propagates adjoints backwards.
///
/// A graph is built for a single forward/backward pass and is confined
/// to one thread; parameters are copied in on first use.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let th = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + th)
        + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * a * x * x)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient (used by tests and checks).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node holding parameter `id`; one node per parameter per graph.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn row_broadcast(&mut self, x: Var, row: Var, mul: bool) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.rows(), 1, "broadcast operand must be a row vector");
        assert_eq!(xv.cols(), rv.cols(), "broadcast column mismatch");
        let c = xv.cols();
        let r = rv.data();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = if mul { *o * r[i % c] } else { *o + r[i % c] };
        }
        let ng = self.ng(x) || self.ng(row);
        let op = if mul { Op::MulRow(x, row) } else { Op::AddRow(x, row) };
        self.push(out, op, ng)
    }

    /// `x + row` with `row` of shape `[1, cols]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        self.row_broadcast(x, row, false)
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        self.row_broadcast(x, row, true)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn offset(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v + k, Op::Offset(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Positive standard deviation: `softplus(x) + floor`.
    pub fn positive(&mut self, x: Var, floor: f64) -> Var {
        let sp = self.softplus(x);
        self.offset(sp, T::lit(floor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Splits the rows of `x` into `blocks` equal blocks and sums each
    /// block over all its entries; result `[blocks, 1]`.
    pub fn block_sum(&mut self, x: Var, blocks: usize) -> Var {
        let xv = self.value(x);
        assert!(blocks > 0 && xv.rows() % blocks == 0, "block_sum row split");
        let per = xv.len() / blocks;
        let out: Vec<T> = xv.data().chunks(per).map(|c| c.iter().copied().sum()).collect();
        let ng = self.ng(x);
        self.push(Tensor::column(out), Op::BlockSum(x, blocks), ng)
    }

    /// `log Σ exp` over every entry; result `[1, 1]`.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let s = super::density::logsumexp(self.value(x).data())?;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::LogSumExp(x), ng))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::LogSoftmaxRows(x), ng)
    }

    pub fn tile_rows(&mut self, x: Var, reps: usize) -> Var {
        let value = self.value(x).tile_rows(reps);
        let ng = self.ng(x);
        self.push(value, Op::TileRows(x, reps), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data_mut()[r * total + off..r * total + off + w].copy_from_slice(pv.row_slice(r));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let out = Tensor::from_fn(xv.rows(), len, |r, c| xv.at(r, start + c));
        let ng = self.ng(x);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    pub fn select_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &r in &idx {
            data.extend_from_slice(xv.row_slice(r));
        }
        let out = Tensor::matrix(idx.len(), c, data);
        let ng = self.ng(x);
        self.push(out, Op::SelectRows(x, Rc::new(idx)), ng)
    }

    /// `out[r] = x[r, idx[r]]`; result `[rows, 1]`.
    pub fn pick_cols(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        assert_eq!(idx.len(), xv.rows(), "pick_cols needs one index per row");
        let out = Tensor::column(idx.iter().enumerate().map(|(r, &c)| xv.at(r, c)).collect());
        let ng = self.ng(x);
        self.push(out, Op::PickCols(x, Rc::new(idx)), ng)
    }

    /// Unfold `x` (`[batch·T, c]`) into `[batch·T, width·c]` windows along
    /// time with `left` zero-padded positions before each series.
    pub fn im2col(&mut self, x: Var, batch: usize, width: usize, left: usize) -> Var {
        let out = kernels::im2col(self.value(x), batch, width, left);
        let ng = self.ng(x);
        self.push(out, Op::Im2Col { x, batch, width, left }, ng)
    }

    /// Multi-head scaled dot-product attention over `batch` stacked
    /// sequences of equal length.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize, causal: bool) -> Var {
        let (out, probs) = kernels::attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            batch,
            heads,
            causal,
        );
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                causal,
                probs,
            },
            ng,
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (out, xhat, rstd) = kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta));
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Elementwise Gaussian log-density `log N(x | mu, sigma²)`.
    pub fn gauss_logpdf(&mut self, x: Var, mu: Var, sigma: Var) -> Var {
        let half_ln2pi = T::lit(0.5 * LN_2PI);
        let (xv, mv, sv) = (self.value(x), self.value(mu), self.value(sigma));
        assert_eq!(xv.shape(), mv.shape(), "gauss_logpdf shape mismatch");
        assert_eq!(xv.shape(), sv.shape(), "gauss_logpdf shape mismatch");
        let mut out = xv.clone();
        for ((o, &m), &s) in out.data_mut().iter_mut().zip(mv.data()).zip(sv.data()) {
            let r = (*o - m) / s;
            *o = -half_ln2pi - s.ln() - T::lit(0.5) * r * r;
        }
        let ng = self.ng(x) || self.ng(mu) || self.ng(sigma);
        self.push(out, Op::GaussLogpdf(x, mu, sigma), ng)
    }

    /// Elementwise `s log p + (1-s) log(1-p)` with `p = clamp(sigmoid(logits))`.
    pub fn bernoulli_logpmf(&mut self, logits: Var, s: Rc<Tensor<T>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), s.shape(), "bernoulli_logpmf shape mismatch");
        let out = lv.zip_map(&s, |a, si| {
            let p = clamp_prob(sigmoid(a));
            si * p.ln() + (T::one() - si) * (T::one() - p).ln()
        });
        let ng = self.ng(logits);
        self.push(out, Op::BernoulliLogpmf { logits, s }, ng)
    }

    /// Independent zero-mean GP log-densities, one per latent column and
    /// per stacked sequence, summed per sequence; result `[batch, 1]`.
    pub fn gp_prior_logpdf(&mut self, z: Var, batch: usize, chol: Rc<Cholesky<T>>) -> Var {
        let zv = self.value(z);
        let t = chol.dim();
        assert_eq!(zv.rows(), batch * t, "gp prior row count");
        let zd = zv.cols();
        let mut alpha = Tensor::zeros(zv.rows(), zd);
        let base = T::lit(-0.5) * (T::lit(t as f64 * LN_2PI) + chol.log_det());
        let mut out = Vec::with_capacity(batch);
        let mut col = vec![T::zero(); t];
        for b in 0..batch {
            let mut acc = T::zero();
            for j in 0..zd {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = zv.at(b * t + i, j);
                }
                let a = chol.solve(&col);
                let quad: T = a.iter().zip(&col).map(|(&x, &y)| x * y).sum();
                acc = acc + base - T::lit(0.5) * quad;
                for (i, &ai) in a.iter().enumerate() {
                    alpha.set(b * t + i, j, ai);
                }
            }
            out.push(acc);
        }
        let ng = self.ng(z);
        self.push(Tensor::column(out), Op::GpPrior { z, chol, alpha }, ng)
    }

    /// Propagate adjoints from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape()));
        }
        if !lv.item().is_finite() {
            return Err(crate::Error::NonFinite("loss".into()));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut adj);
            }
            adj[i] = Some(g);
        }
        Ok(Gradients {
            adjoints: adj,
            param_vars: self.param_vars.clone(),
        })
    }

    fn acc(&self, adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(a) => a.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, adj: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(adj, *a, matmul_bt(g, val(*b)));
                }
                if self.ng(*b) {
                    self.acc(adj, *b, matmul_at(val(*a), g));
                }
            }
            Op::Add(a, b) => {
                self.acc(adj, *a, g.clone());
                self.acc(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, g.clone());
                self.acc(adj, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(adj, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.acc(adj, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                if self.ng(*a) {
                    self.acc(adj, *a, g.zip_map(val(*b), |x, y| x / y));
                }
                if self.ng(*b) {
                    // d(a/b)/db = -y / b
                    let t = g.zip_map(y, |x, q| x * q);
                    self.acc(adj, *b, t.zip_map(val(*b), |x, d| -x / d));
                }
            }
            Op::AddRow(x, row) | Op::MulRow(x, row) => {
                let is_mul = matches!(node.op, Op::MulRow(..));
                let c = g.cols();
                if self.ng(*x) {
                    let gx = if is_mul {
                        let r = val(*row).data();
                        let mut t = g.clone();
                        for (i, v) in t.data_mut().iter_mut().enumerate() {
                            *v = *v * r[i % c];
                        }
                        t
                    } else {
                        g.clone()
                    };
                    self.acc(adj, *x, gx);
                }
                if self.ng(*row) {
                    let mut gr = vec![T::zero(); c];
                    let xv = val(*x).data();
                    for (i, &gv) in g.data().iter().enumerate() {
                        gr[i % c] = gr[i % c] + if is_mul { gv * xv[i] } else { gv };
                    }
                    self.acc(adj, *row, Tensor::row(gr));
                }
            }
            Op::Scale(x, k) => {
                let k = *k;
                self.acc(adj, *x, g.map(|v| v * k));
            }
            Op::Offset(x) => self.acc(adj, *x, g.clone()),
            Op::Neg(x) => self.acc(adj, *x, g.map(|v| -v)),
            Op::Exp(x) => self.acc(adj, *x, g.zip_map(y, |a, b| a * b)),
            Op::Log(x) => self.acc(adj, *x, g.zip_map(val(*x), |a, b| a / b)),
            Op::Tanh(x) => self.acc(adj, *x, g.zip_map(y, |a, t| a * (T::one() - t * t))),
            Op::Sigmoid(x) => self.acc(adj, *x, g.zip_map(y, |a, s| a * s * (T::one() - s))),
            Op::Softplus(x) => self.acc(adj, *x, g.zip_map(val(*x), |a, v| a * sigmoid(v))),
            Op::Relu(x) => self.acc(
                adj,
                *x,
                g.zip_map(val(*x), |a, v| if v > T::zero() { a } else { T::zero() }),
            ),
            Op::Gelu(x) => self.acc(adj, *x, g.zip_map(val(*x), |a, v| a * gelu_grad(v))),
            Op::Square(x) => self.acc(adj, *x, g.zip_map(val(*x), |a, v| T::lit(2.0) * a * v)),
            Op::SumAll(x) => {
                let xv = val(*x);
                self.acc(adj, *x, Tensor::full(xv.rows(), xv.cols(), g.item()));
            }
            Op::BlockSum(x, blocks) => {
                let xv = val(*x);
                let per = xv.len() / blocks;
                let mut t = Tensor::zeros(xv.rows(), xv.cols());
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = g.data()[i / per];
                }
                self.acc(adj, *x, t);
            }
            Op::LogSumExp(x) => {
                let s = y.item();
                let gi = g.item();
                self.acc(adj, *x, val(*x).map(|v| gi * (v - s).exp()));
            }
            Op::LogSoftmaxRows(x) => {
                let c = g.cols();
                let mut t = g.clone();
                for (r, row) in t.data_mut().chunks_mut(c).enumerate() {
                    let gs: T = row.iter().copied().sum();
                    let yr = y.row_slice(r);
                    for (v, &l) in row.iter_mut().zip(yr) {
                        *v = *v - l.exp() * gs;
                    }
                }
                self.acc(adj, *x, t);
            }
            Op::TileRows(x, reps) => {
                let xv = val(*x);
                let n = xv.len();
                let mut t = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..*reps {
                    for (o, &v) in t.data_mut().iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                        *o = *o + v;
                    }
                }
                self.acc(adj, *x, t);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.ng(p) {
                        let t = Tensor::from_fn(g.rows(), w, |r, c| g.data()[r * total + off + c]);
                        self.acc(adj, p, t);
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let mut t = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        t.set(r, start + c, g.at(r, c));
                    }
                }
                self.acc(adj, *x, t);
            }
            Op::SelectRows(x, idx) => {
                let xv = val(*x);
                let mut t = Tensor::zeros(xv.rows(), xv.cols());
                for (i, &r) in idx.iter().enumerate() {
                    for c in 0..xv.cols() {
                        let cur = t.at(r, c);
                        t.set(r, c, cur + g.at(i, c));
                    }
                }
                self.acc(adj, *x, t);
            }
            Op::PickCols(x, idx) => {
                let xv = val(*x);
                let mut t = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &c) in idx.iter().enumerate() {
                    t.set(r, c, g.data()[r]);
                }
                self.acc(adj, *x, t);
            }
            Op::Im2Col { x, batch, width, left } => {
                let xv = val(*x);
                let t = kernels::im2col_backward(g, xv.rows(), xv.cols(), *batch, *width, *left);
                self.acc(adj, *x, t);
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                causal,
                probs,
            } => {
                let (dq, dk, dv) =
                    kernels::attention_backward(g, val(*q), val(*k), val(*v), probs, *batch, *heads, *causal);
                self.acc(adj, *q, dq);
                self.acc(adj, *k, dk);
                self.acc(adj, *v, dv);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (dx, dg, db) = kernels::layer_norm_backward(g, val(*gamma), xhat, rstd);
                self.acc(adj, *x, dx);
                self.acc(adj, *gamma, dg);
                self.acc(adj, *beta, db);
            }
            Op::GaussLogpdf(x, mu, sigma) => {
                let (xv, mv, sv) = (val(*x), val(*mu), val(*sigma));
                let n = xv.len();
                let mut dx = Vec::with_capacity(n);
                let mut dsig = Vec::with_capacity(n);
                for i in 0..n {
                    let s = sv.data()[i];
                    let r = (xv.data()[i] - mv.data()[i]) / s;
                    let gi = g.data()[i];
                    dx.push(-gi * r / s);
                    dsig.push(gi * (r * r - T::one()) / s);
                }
                let (rows, cols) = (xv.rows(), xv.cols());
                if self.ng(*mu) {
                    self.acc(adj, *mu, Tensor::matrix(rows, cols, dx.iter().map(|&v| -v).collect()));
                }
                if self.ng(*x) {
                    self.acc(adj, *x, Tensor::matrix(rows, cols, dx));
                }
                self.acc(adj, *sigma, Tensor::matrix(rows, cols, dsig));
            }
            Op::BernoulliLogpmf { logits, s } => {
                let eps = T::lit(super::density::PROB_EPS);
                let t = val(*logits).zip_map(s, |a, si| {
                    let p = sigmoid(a);
                    if p < eps || p > T::one() - eps {
                        T::zero()
                    } else {
                        si - p
                    }
                });
                self.acc(adj, *logits, t.zip_map(g, |a, b| a * b));
            }
            Op::GpPrior { z, chol, alpha, .. } => {
                let t = chol.dim();
                let mut dz = alpha.clone();
                for (i, v) in dz.data_mut().iter_mut().enumerate() {
                    let b = i / (alpha.cols() * t);
                    *v = -*v * g.data()[b];
                }
                self.acc(adj, *z, dz);
            }
        }
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T> {
    adjoints: Vec<Option<Tensor<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of any node; `None` when the loss does not reach it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradient of every parameter in `store`, exactly zero for parameters
    /// the loss does not reach.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .ids()
            .map(|id| {
                let p = store.get(id);
                self.param_vars
                    .get(id.index())
                    .copied()
                    .flatten()
                    .and_then(|v| self.adjoints[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
            })
            .collect()
    }
}
