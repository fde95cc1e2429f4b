//! Forward/backward kernels for the fused tape operations.

use super::tensor::Tensor;
use crate::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn im2col<T: Scalar>(x: &Tensor<T>, batch: usize, width: usize, left: usize) -> Tensor<T> {
    let (rows, c) = (x.rows(), x.cols());
    assert!(batch > 0 && rows % batch == 0, "im2col batch split");
    let t_len = rows / batch;
    let mut out = Tensor::zeros(rows, width * c);
    let oc = width * c;
    for b in 0..batch {
        for t in 0..t_len {
            let orow = (b * t_len + t) * oc;
            for k in 0..width {
                // source time index t + k - left
                let src = t as isize + k as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let srow = x.row_slice(b * t_len + src as usize);
                out.data_mut()[orow + k * c..orow + (k + 1) * c].copy_from_slice(srow);
            }
        }
    }
    out
}

pub(crate) fn im2col_backward<T: Scalar>(
    g: &Tensor<T>,
    rows: usize,
    c: usize,
    batch: usize,
    width: usize,
    left: usize,
) -> Tensor<T> {
    let t_len = rows / batch;
    let mut dx = Tensor::zeros(rows, c);
    let oc = width * c;
    for b in 0..batch {
        for t in 0..t_len {
            let orow = (b * t_len + t) * oc;
            for k in 0..width {
                let src = t as isize + k as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let drow = (b * t_len + src as usize) * c;
                for ch in 0..c {
                    let v = dx.data()[drow + ch] + g.data()[orow + k * c + ch];
                    dx.data_mut()[drow + ch] = v;
                }
            }
        }
    }
    dx
}

#[inline]
fn visible(t: usize, t_len: usize, causal: bool) -> usize {
    if causal {
        t + 1
    } else {
        t_len
    }
}

/// Returns the output and the attention probabilities laid out as
/// `[batch][head][t][j]` with `j` ranging over all `T` positions (masked
/// entries hold zero).
pub(crate) fn attention_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    batch: usize,
    heads: usize,
    causal: bool,
) -> (Tensor<T>, Vec<T>) {
    let (rows, h) = (q.rows(), q.cols());
    assert_eq!(k.shape(), q.shape(), "attention key shape mismatch");
    assert_eq!(v.shape(), q.shape(), "attention value shape mismatch");
    assert!(batch > 0 && rows % batch == 0, "attention batch split");
    assert!(heads > 0 && h % heads == 0, "attention head split");
    let t_len = rows / batch;
    let hd = h / heads;
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut out = Tensor::zeros(rows, h);
    let mut probs = vec![T::zero(); batch * heads * t_len * t_len];
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut scores = vec![T::zero(); t_len];
    for b in 0..batch {
        for hh in 0..heads {
            let off = hh * hd;
            for t in 0..t_len {
                let qrow = &qd[(b * t_len + t) * h + off..(b * t_len + t) * h + off + hd];
                let n = visible(t, t_len, causal);
                let mut m = T::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate().take(n) {
                    let krow = &kd[(b * t_len + j) * h + off..(b * t_len + j) * h + off + hd];
                    let dot: T = qrow.iter().zip(krow).map(|(&a, &c)| a * c).sum();
                    *s = dot * scale;
                    m = m.max(*s);
                }
                let mut z = T::zero();
                for s in scores.iter_mut().take(n) {
                    *s = (*s - m).exp();
                    z = z + *s;
                }
                let pbase = ((b * heads + hh) * t_len + t) * t_len;
                let orow = (b * t_len + t) * h + off;
                for j in 0..n {
                    let p = scores[j] / z;
                    probs[pbase + j] = p;
                    let vrow = &vd[(b * t_len + j) * h + off..(b * t_len + j) * h + off + hd];
                    for (o, &vv) in out.data_mut()[orow..orow + hd].iter_mut().zip(vrow) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    g: &Tensor<T>,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    batch: usize,
    heads: usize,
    causal: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (rows, h) = (q.rows(), q.cols());
    let t_len = rows / batch;
    let hd = h / heads;
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut dq = Tensor::zeros(rows, h);
    let mut dk = Tensor::zeros(rows, h);
    let mut dv = Tensor::zeros(rows, h);
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), g.data());
    let mut dp = vec![T::zero(); t_len];
    for b in 0..batch {
        for hh in 0..heads {
            let off = hh * hd;
            for t in 0..t_len {
                let n = visible(t, t_len, causal);
                let pbase = ((b * heads + hh) * t_len + t) * t_len;
                let grow = (b * t_len + t) * h + off;
                let gslice = &gd[grow..grow + hd];
                let mut dot_pg = T::zero();
                for j in 0..n {
                    let vrow = (b * t_len + j) * h + off;
                    let p = probs[pbase + j];
                    let mut d = T::zero();
                    for c in 0..hd {
                        d = d + gslice[c] * vd[vrow + c];
                        let cur = dv.data()[vrow + c];
                        dv.data_mut()[vrow + c] = cur + p * gslice[c];
                    }
                    dp[j] = d;
                    dot_pg = dot_pg + p * d;
                }
                let qrow = (b * t_len + t) * h + off;
                for j in 0..n {
                    let ds = probs[pbase + j] * (dp[j] - dot_pg) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let krow = (b * t_len + j) * h + off;
                    for c in 0..hd {
                        let a = dq.data()[qrow + c] + ds * kd[krow + c];
                        dq.data_mut()[qrow + c] = a;
                        let bb = dk.data()[krow + c] + ds * qd[qrow + c];
                        dk.data_mut()[krow + c] = bb;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let c = x.cols();
    assert_eq!(gamma.cols(), c, "layer norm gain width");
    assert_eq!(beta.cols(), c, "layer norm bias width");
    let n = T::lit(c as f64);
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for row in xhat.data_mut().chunks_mut(c) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + T::lit(LN_EPS)).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * r;
        }
        rstd.push(r);
    }
    let mut out = xhat.clone();
    for row in out.data_mut().chunks_mut(c) {
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    (out, xhat, rstd)
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    g: &Tensor<T>,
    gamma: &Tensor<T>,
    xhat: &Tensor<T>,
    rstd: &[T],
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = g.cols();
    let n = T::lit(c as f64);
    let mut dx = Tensor::zeros(g.rows(), c);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for r in 0..g.rows() {
        let gr = g.row_slice(r);
        let xr = xhat.row_slice(r);
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for j in 0..c {
            dgamma[j] = dgamma[j] + gr[j] * xr[j];
            dbeta[j] = dbeta[j] + gr[j];
            dxhat[j] = gr[j] * gamma.data()[j];
            s1 = s1 + dxhat[j];
            s2 = s2 + dxhat[j] * xr[j];
        }
        let k = rstd[r] / n;
        for j in 0..c {
            dx.data_mut()[r * c + j] = k * (n * dxhat[j] - s1 - xr[j] * s2);
        }
    }
    (dx, Tensor::row(dgamma), Tensor::row(dbeta))
}
