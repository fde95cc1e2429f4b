//! Every differentiable tape operation against central finite differences.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supnotmiwae::numerics::{Cholesky, Graph, Tensor, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Builds a scalar from the inputs; returns the loss var.
type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn check(name: &str, inputs: Vec<Tensor<f64>>, build: &Build) {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
        for j in 0..x.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

/// Reduce a matrix to a scalar with fixed random weights so every entry
/// gets a distinct adjoint.
fn reduce(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let v = g.value(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, v.rows(), v.cols(), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w);
    g.sum(p)
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, 3, 4, -1.5, 1.5);
    let b = rand_tensor(&mut rng, 3, 4, 0.5, 2.0);
    let row = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
    let unary: Vec<(&str, fn(&mut Graph<f64>, Var) -> Var)> = vec![
        ("exp", |g, x| g.exp(x)),
        ("tanh", |g, x| g.tanh(x)),
        ("sigmoid", |g, x| g.sigmoid(x)),
        ("softplus", |g, x| g.softplus(x)),
        ("gelu", |g, x| g.gelu(x)),
        ("square", |g, x| g.square(x)),
        ("neg", |g, x| g.neg(x)),
        ("relu", |g, x| g.relu(x)),
        ("scale", |g, x| g.scale(x, 0.37)),
        ("offset", |g, x| g.offset(x, 0.37)),
        ("log_softmax", |g, x| g.log_softmax_rows(x)),
        ("tile", |g, x| g.tile_rows(x, 3)),
        ("slice", |g, x| g.slice_cols(x, 1, 2)),
        ("select", |g, x| g.select_rows(x, vec![2, 0, 2])),
        ("pick", |g, x| g.pick_cols(x, vec![3, 0, 1])),
        ("block_sum", |g, x| g.block_sum(x, 3)),
        ("im2col_causal", |g, x| g.im2col(x, 1, 3, 2)),
        ("im2col_same", |g, x| g.im2col(x, 1, 3, 1)),
    ];
    for (name, f) in unary {
        check(name, vec![a.clone()], &move |g, v| {
            let y = f(g, v[0]);
            reduce(g, y, 9)
        });
    }
    check("log", vec![b.clone()], &|g, v| {
        let y = g.log(v[0]);
        reduce(g, y, 9)
    });
    let binary: Vec<(&str, fn(&mut Graph<f64>, Var, Var) -> Var)> = vec![
        ("add", |g, x, y| g.add(x, y)),
        ("sub", |g, x, y| g.sub(x, y)),
        ("mul", |g, x, y| g.mul(x, y)),
        ("div", |g, x, y| g.div(x, y)),
        ("concat", |g, x, y| g.concat_cols(&[x, y, x])),
    ];
    for (name, f) in binary {
        check(name, vec![a.clone(), b.clone()], &move |g, v| {
            let y = f(g, v[0], v[1]);
            reduce(g, y, 10)
        });
    }
    check("add_row", vec![a.clone(), row.clone()], &|g, v| {
        let y = g.add_row(v[0], v[1]);
        reduce(g, y, 11)
    });
    check("mul_row", vec![a.clone(), row.clone()], &|g, v| {
        let y = g.mul_row(v[0], v[1]);
        reduce(g, y, 11)
    });
    check("matmul", vec![a.clone(), b.transpose()], &|g, v| {
        let y = g.matmul(v[0], v[1]);
        reduce(g, y, 12)
    });
    check("logsumexp", vec![a.clone()], &|g, v| g.logsumexp(v[0]).unwrap());
}

#[test]
fn logsumexp_gradient_is_softmax() {
    let w = Tensor::<f64>::column(vec![0.2, -1.0, 0.7, 1.5]);
    let mut g = Graph::new();
    let x = g.input(w.clone());
    let l = g.logsumexp(x).unwrap();
    let grads = g.backward(l).unwrap();
    let z: f64 = w.data().iter().map(|v| v.exp()).sum();
    for (gi, wi) in grads.wrt(x).unwrap().data().iter().zip(w.data()) {
        assert!((gi - wi.exp() / z).abs() < 1e-15);
    }
}

#[test]
fn sum_of_squares_gradient() {
    let w = Tensor::<f64>::column(vec![0.5, -2.0, 3.0]);
    let mut g = Graph::new();
    let x = g.input(w.clone());
    let sq = g.square(x);
    let l = g.sum(sq);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, -4.0, 6.0]);
}

#[test]
fn fused_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (batch, t, h) = (2, 4, 6);
    let q = rand_tensor(&mut rng, batch * t, h, -1.0, 1.0);
    let k = rand_tensor(&mut rng, batch * t, h, -1.0, 1.0);
    let v = rand_tensor(&mut rng, batch * t, h, -1.0, 1.0);
    for causal in [true, false] {
        check("attention", vec![q.clone(), k.clone(), v.clone()], &move |g, x| {
            let y = g.attention(x[0], x[1], x[2], batch, 3, causal);
            reduce(g, y, 13)
        });
    }
    let gamma = rand_tensor(&mut rng, 1, h, 0.5, 1.5);
    let beta = rand_tensor(&mut rng, 1, h, -0.5, 0.5);
    check("layer_norm", vec![q.clone(), gamma, beta], &|g, x| {
        let y = g.layer_norm(x[0], x[1], x[2]);
        reduce(g, y, 14)
    });
    let sigma = rand_tensor(&mut rng, batch * t, h, 0.3, 2.0);
    check("gauss_logpdf", vec![q.clone(), k.clone(), sigma], &|g, x| {
        let y = g.gauss_logpdf(x[0], x[1], x[2]);
        reduce(g, y, 15)
    });
    let s = Rc::new(Tensor::from_fn(batch * t, h, |r, c| ((r + c) % 2) as f64));
    check("bernoulli", vec![q.clone()], &move |g, x| {
        let y = g.bernoulli_logpmf(x[0], s.clone());
        reduce(g, y, 16)
    });
    let times: [f64; 4] = [0.0, 0.3, 0.5, 1.0];
    let gram = Tensor::from_fn(t, t, |i, j| 1.0 / (1.0 + (times[i] - times[j]).powi(2) / 0.04));
    let chol = Rc::new(Cholesky::factor(&gram).unwrap());
    check("gp_prior", vec![rand_tensor(&mut rng, batch * t, 3, -1.0, 1.0)], &move |g, x| {
        let y = g.gp_prior_logpdf(x[0], batch, chol.clone());
        reduce(g, y, 17)
    });
}

#[test]
fn unreached_inputs_get_no_adjoint() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::scalar(1.0));
    let b = g.input(Tensor::scalar(2.0));
    let l = g.square(a);
    let grads = g.backward(l).unwrap();
    assert!(grads.wrt(b).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(2, 1));
    assert!(g.backward(a).is_err());
}
