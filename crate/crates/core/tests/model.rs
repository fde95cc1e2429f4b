mod common;

use std::f64::consts::PI;

use common::{causality_instance, random_series, small_config};
use proptest::prelude::*;
use supnotmiwae::baselines::compute_intervals;
use supnotmiwae::data::MaskedTimeSeries;
use supnotmiwae::model::{
    build_gram, decayed_impute, gp_prior_logpdf, obsdropout_mask, observed_loglik, prior_cholesky, sample_latents,
    sample_missing, KernelConfig, ModelParams, ParticleNoise,
};
use supnotmiwae::numerics::Tensor;
use supnotmiwae::objective::{log_importance_weights, Ablation};
use supnotmiwae::rng::{derive, Stream};

#[test]
fn gram_hand_example() {
    let k: Tensor<f64> = build_gram(&[0.0, 0.1, 0.2], &KernelConfig::default());
    let want = [1.0, 0.8, 0.5, 0.8, 1.0, 0.8, 0.5, 0.8, 1.0];
    for (a, b) in k.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

/// Gauss-Jordan inverse and determinant, independent of the Cholesky path.
fn inverse_and_logdet(m: &Tensor<f64>) -> (Vec<Vec<f64>>, f64) {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row_slice(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let piv = a[c][c];
        logdet += piv.abs().ln();
        for j in 0..n {
            a[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    (inv, logdet)
}

#[test]
fn gp_prior_matches_explicit_inverse() {
    let times = [0.0, 0.07, 0.2, 0.31, 0.5, 0.9];
    let kc = KernelConfig {
        length_scale: 0.3,
        variance: 1.7,
    };
    let gram: Tensor<f64> = build_gram(&times, &kc);
    let (inv, logdet) = inverse_and_logdet(&gram);
    let z = Tensor::from_fn(6, 3, |t, j| ((t * 3 + j) as f64 * 0.7).sin());
    let mut want = 0.0;
    for j in 0..3 {
        let col: Vec<f64> = (0..6).map(|t| z.at(t, j)).collect();
        let quad: f64 = (0..6).flat_map(|a| (0..6).map(move |b| (a, b))).map(|(a, b)| col[a] * inv[a][b] * col[b]).sum();
        want += -0.5 * quad - 0.5 * logdet - 3.0 * (2.0 * PI).ln();
    }
    let chol = prior_cholesky(&times, &kc).unwrap();
    let got = gp_prior_logpdf(&z, &chol).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");

    // latent dimensions are exchangeable under the prior
    let swapped = Tensor::from_fn(6, 3, |t, j| z.at(t, 2 - j));
    assert!((gp_prior_logpdf(&swapped, &chol).unwrap() - got).abs() < 1e-12);
}

#[test]
fn causality_on_random_instances() {
    for seed in 0..20 {
        assert!(causality_instance(seed), "causality broken for seed {seed}");
    }
}

#[test]
fn obsdropout_rate() {
    let m = obsdropout_mask(100_000, 0.4, &mut derive(1, Stream::Dropout, &[])).unwrap();
    let rate = m.keep.iter().filter(|&&k| k).count() as f64 / 1e5;
    assert!((rate - 0.6).abs() < 0.01, "{rate}");
    let again = obsdropout_mask(100_000, 0.4, &mut derive(1, Stream::Dropout, &[])).unwrap();
    assert_eq!(m, again);
    let none = obsdropout_mask(1000, 0.0, &mut derive(1, Stream::Dropout, &[])).unwrap();
    assert!(none.keep.iter().all(|&k| k));
    assert!(obsdropout_mask(10, 1.0, &mut derive(1, Stream::Dropout, &[])).is_err());
}

#[test]
fn decayed_impute_examples() {
    // one feature, t=0 observed (2.0), t=1 observed (5.0) but dropped,
    // t=2 missing
    let s = MaskedTimeSeries::new("a", vec![0.0, 1.0, 2.0], vec![2.0, 5.0, 0.0], vec![true, true, false], 1, None).unwrap();
    let delta = compute_intervals(s.mask(), s.times(), 1);
    let x_tilde = [9.0, -1.0, 4.0];
    let keep = [true, false, true];
    // δ at t=1 is 1; w·δ + b = ln(1/0.3) gives γ = 0.3
    let w = [(1.0f64 / 0.3).ln()];
    let out = decayed_impute(&s, &x_tilde, &keep, &delta, &w, &[0.0]);
    assert_eq!(out[0], 2.0);
    assert!((out[1] - (-0.1)).abs() < 1e-12, "{}", out[1]);
    // t=2: last observation is 5.0 (s, not s⊙m), δ = 1, γ = 0.3
    assert!((out[2] - (0.3 * 5.0 + 0.7 * 4.0)).abs() < 1e-12);

    // γ → 0 recovers the generated value on missing cells
    let out = decayed_impute(&s, &x_tilde, &keep, &delta, &[1e6], &[0.0]);
    assert!((out[2] - 4.0).abs() < 1e-12);
    // no earlier observation: generated value
    let cold = MaskedTimeSeries::new("b", vec![0.0], vec![0.0], vec![false], 1, None).unwrap();
    let d0 = compute_intervals(cold.mask(), cold.times(), 1);
    assert_eq!(decayed_impute(&cold, &[3.5], &[true], &d0, &[0.0], &[0.0]), vec![3.5]);
}

#[test]
fn zero_head_classifier_is_uniform() {
    let mut model = ModelParams::<f64>::new(small_config(2, false), 3).unwrap();
    for name in ["cls.head.weight", "cls.head.bias"] {
        let id = model.store.find(name).unwrap();
        model.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Tensor::from_fn(5, 2, |t, j| (t + j) as f64);
    let lp = model.classifier_forward(&x);
    assert_eq!(lp.shape(), &[1, 2]);
    for c in 0..2 {
        assert!((lp.at(0, c).exp() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn output_ranges_and_shapes() {
    let mut rng = derive(2, Stream::Data, &[]);
    for online in [false, true] {
        let model = ModelParams::<f64>::new(small_config(3, online), 8).unwrap();
        let s = random_series(7, 3, &mut rng);
        let enc = model.encoder_forward(&s);
        assert!(enc.sigma.data().iter().all(|&v| v > 0.0));
        let chol = prior_cholesky(s.times(), &model.config.kernel).unwrap();
        let eps = Tensor::from_fn(14, 4, |r, c| ((r * 4 + c) as f64).cos());
        let paths = sample_latents(&enc, &chol, &eps).unwrap();
        assert_eq!(paths.len(), 2);
        let dec = model.decoder_forward(&paths[0].z);
        assert!(dec.sigma.data().iter().all(|&v| v > 0.0));
        let ex = Tensor::from_fn(7, 3, |r, c| ((r + c) as f64).sin() * 5.0);
        let xt = sample_missing(&dec, &s, &ex).unwrap();
        for t in 0..7 {
            for j in 0..3 {
                if let Some(v) = s.observed(t, j) {
                    assert_eq!(xt.at(t, j), v);
                }
            }
        }
        let probs = model.missing_model_forward(&xt);
        assert!(probs.data().iter().all(|&p| (1e-6..=1.0 - 1e-6).contains(&p)));
        let lp = model.classifier_forward(&xt);
        assert_eq!(lp.rows(), if online { 7 } else { 1 });
        for r in 0..lp.rows() {
            let total: f64 = lp.row_slice(r).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn single_series_paths_agree_with_batched_weights() {
    let model = ModelParams::<f64>::new(small_config(3, false), 4).unwrap();
    let mut rng = derive(5, Stream::Data, &[]);
    let s = random_series(6, 3, &mut rng);
    let noise = ParticleNoise::<f64>::draw(3, 6, 4, 3, 0.0, &mut rng.clone(), &mut rng).unwrap();
    let lw = log_importance_weights(
        &model,
        &s,
        None,
        &noise,
        Ablation {
            supervision: false,
            mnar: false,
            obs_dropout: false,
        },
    )
    .unwrap();
    let enc = model.encoder_forward(&s);
    let chol = prior_cholesky(s.times(), &model.config.kernel).unwrap();
    let paths = sample_latents(&enc, &chol, &noise.eps_z).unwrap();
    for (k, p) in paths.iter().enumerate() {
        assert!((p.log_q - lw.log_q[k]).abs() < 1e-9);
        assert!((p.log_pz - lw.log_pz[k]).abs() < 1e-9);
        let dec = model.decoder_forward(&p.z);
        let ll = observed_loglik(&dec, &s).unwrap();
        assert!((ll - lw.log_xo[k]).abs() < 1e-9, "{ll} vs {}", lw.log_xo[k]);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = ModelParams::<f64>::new(small_config(3, true), 12).unwrap();
    let text = serde_json::to_string(&model).unwrap();
    let back: ModelParams<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(back.config, model.config);
    for (a, b) in back.store.entries().iter().zip(model.store.entries()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_is_symmetric_with_constant_diagonal(
        mut times in prop::collection::vec(0.0f64..1.0, 1..10),
        l in 0.05f64..2.0,
        var in 0.1f64..3.0,
    ) {
        times.sort_by(f64::total_cmp);
        let kc = KernelConfig { length_scale: l, variance: var };
        let k: Tensor<f64> = build_gram(&times, &kc);
        for i in 0..times.len() {
            prop_assert_eq!(k.at(i, i), var);
            for j in 0..times.len() {
                prop_assert_eq!(k.at(i, j), k.at(j, i));
            }
        }
    }

    #[test]
    fn decayed_impute_keeps_kept_observations(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        bits in prop::collection::vec(any::<bool>(), 24),
        w in 0.0f64..2.0,
    ) {
        let s = MaskedTimeSeries::new("p", (0..6).map(f64::from).collect(), vals.clone(), bits[..12].to_vec(), 2, None).unwrap();
        let delta = compute_intervals(s.mask(), s.times(), 2);
        let x_tilde: Vec<f64> = vals.iter().map(|v| v * 0.5 - 1.0).collect();
        let out = decayed_impute(&s, &x_tilde, &bits[12..], &delta, &[w, w], &[0.1, 0.0]);
        for i in 0..12 {
            if bits[i] && bits[12 + i] {
                prop_assert_eq!(out[i], vals[i]);
            }
            prop_assert!(out[i].is_finite());
        }
    }
}
