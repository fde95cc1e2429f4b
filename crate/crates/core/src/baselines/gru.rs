use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::Scalar;

/// Dense GRU weights. Input maps are `[in, h]`, recurrent maps `[h, h]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GruParams<T> {
    pub w_a: Tensor<T>,
    pub u_a: Tensor<T>,
    pub b_a: Vec<T>,
    pub w_r: Tensor<T>,
    pub u_r: Tensor<T>,
    pub b_r: Vec<T>,
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> GruParams<T> {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w_a: Tensor::zeros(inputs, hidden),
            u_a: Tensor::zeros(hidden, hidden),
            b_a: vec![T::zero(); hidden],
            w_r: Tensor::zeros(inputs, hidden),
            u_r: Tensor::zeros(hidden, hidden),
            b_r: vec![T::zero(); hidden],
            w: Tensor::zeros(inputs, hidden),
            u: Tensor::zeros(hidden, hidden),
            b: vec![T::zero(); hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }
}

fn affine<T: Scalar>(x: &[T], w: &Tensor<T>, h: &[T], u: &Tensor<T>, b: &[T]) -> Vec<T> {
    (0..b.len())
        .map(|c| {
            let xs: T = x.iter().enumerate().map(|(i, &v)| v * w.at(i, c)).sum();
            let hs: T = h.iter().enumerate().map(|(i, &v)| v * u.at(i, c)).sum();
            xs + hs + b[c]
        })
        .collect()
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// One GRU update:
/// `a = σ(W_a x + U_a h + b_a)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W x + U(r⊙h) + b)`, `h' = (1−a)⊙h + a⊙h̃`.
pub fn gru_cell<T: Scalar>(x: &[T], h_prev: &[T], p: &GruParams<T>) -> Vec<T> {
    let a: Vec<T> = affine(x, &p.w_a, h_prev, &p.u_a, &p.b_a).into_iter().map(sigmoid).collect();
    let r: Vec<T> = affine(x, &p.w_r, h_prev, &p.u_r, &p.b_r).into_iter().map(sigmoid).collect();
    let rh: Vec<T> = r.iter().zip(h_prev).map(|(&r, &h)| r * h).collect();
    let cand: Vec<T> = affine(x, &p.w, &rh, &p.u, &p.b).into_iter().map(|v| v.tanh()).collect();
    (0..h_prev.len())
        .map(|i| (T::one() - a[i]) * h_prev[i] + a[i] * cand[i])
        .collect()
}

/// GRU weights held in a [`ParamStore`], gate blocks packed column-wise
/// in the order update, reset, candidate.
#[derive(Clone, Debug)]
pub struct GruLayer {
    /// `[in, 3h]`
    pub w_x: ParamId,
    /// `[h, 2h]` for the update and reset gates.
    pub u_ar: ParamId,
    /// `[h, h]` for the candidate.
    pub u_c: ParamId,
    /// `[1, 3h]`
    pub bias: ParamId,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_x: store.add_weight(format!("{name}.w_x"), group, inputs, 3 * hidden, rng),
            u_ar: store.add_weight(format!("{name}.u_ar"), group, hidden, 2 * hidden, rng),
            u_c: store.add_weight(format!("{name}.u_c"), group, hidden, hidden, rng),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros(1, 3 * hidden)),
            hidden,
        }
    }

    /// Input projections `x W + b` for all steps at once; `[rows, 3h]`.
    pub fn project<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w_x);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    /// One step from the projected input of this step (`[B, 3h]`).
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, xw: Var, h: Var) -> Var {
        let n = self.hidden;
        let u_ar = g.param(store, self.u_ar);
        let u_c = g.param(store, self.u_c);
        let hu = g.matmul(h, u_ar);
        let x_ar = g.slice_cols(xw, 0, 2 * n);
        let gates = g.add(x_ar, hu);
        let gates = g.sigmoid(gates);
        let a = g.slice_cols(gates, 0, n);
        let r = g.slice_cols(gates, n, n);
        let rh = g.mul(r, h);
        let rhu = g.matmul(rh, u_c);
        let x_c = g.slice_cols(xw, 2 * n, n);
        let cand = g.add(x_c, rhu);
        let cand = g.tanh(cand);
        let diff = g.sub(cand, h);
        let upd = g.mul(a, diff);
        g.add(h, upd)
    }

    /// Unpacked copy of the weights.
    pub fn params<T: Scalar>(&self, store: &ParamStore<T>) -> GruParams<T> {
        let n = self.hidden;
        let cols = |t: &Tensor<T>, start: usize| Tensor::from_fn(t.rows(), n, |r, c| t.at(r, start + c));
        let (wx, uar, uc, b) = (
            store.get(self.w_x),
            store.get(self.u_ar),
            store.get(self.u_c),
            store.get(self.bias),
        );
        GruParams {
            w_a: cols(wx, 0),
            u_a: cols(uar, 0),
            b_a: b.data()[..n].to_vec(),
            w_r: cols(wx, n),
            u_r: cols(uar, n),
            b_r: b.data()[n..2 * n].to_vec(),
            w: cols(wx, 2 * n),
            u: uc.clone(),
            b: b.data()[2 * n..].to_vec(),
        }
    }
}

/// GRU-D decay parameters: a per-feature input decay and a dense hidden
/// decay, both `γ = exp(−max(0, Wδ + b))`.
#[derive(Clone, Debug)]
pub struct DecayParams {
    /// `[1, d]` diagonal weights.
    pub w_x: ParamId,
    pub b_x: ParamId,
    /// `[d, h]`
    pub w_h: ParamId,
    pub b_h: ParamId,
}

impl DecayParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        d: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_x: store.add(
                format!("{name}.w_x"),
                group,
                Tensor::from_fn(1, d, |_, _| T::lit(rng.random_range(0.0..1.0))),
            ),
            b_x: store.add(format!("{name}.b_x"), group, Tensor::zeros(1, d)),
            w_h: store.add_weight(format!("{name}.w_h"), group, d, hidden, rng),
            b_h: store.add(format!("{name}.b_h"), group, Tensor::zeros(1, hidden)),
        }
    }
}

/// `exp(−relu(pre))` on the tape.
pub(crate) fn decay<T: Scalar>(g: &mut Graph<T>, pre: Var) -> Var {
    let r = g.relu(pre);
    let n = g.neg(r);
    g.exp(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_examples() {
        let p = GruParams::<f64>::zeros(2, 3);
        assert_eq!(gru_cell(&[1.0, -2.0], &[0.0; 3], &p), vec![0.0; 3]);
        let h = gru_cell(&[1.0, -2.0], &[2.0, -4.0, 1.0], &p);
        assert_eq!(h, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn saturated_update_gate_returns_candidate() {
        let mut p = GruParams::<f64>::zeros(1, 1);
        p.b_a = vec![20.0];
        p.b = vec![0.7];
        let h = gru_cell(&[0.3], &[5.0], &p);
        assert!((h[0] - 0.7f64.tanh()).abs() < 1e-7, "{h:?}");
    }
}
