mod common;

use common::{random_series, small_config};
use supnotmiwae::baselines::{compute_intervals, impute_mean};
use supnotmiwae::data::{
    generate_synthetic, make_holdout, standardize, Dataset, HoldoutMask, MaskedTimeSeries, Split, SyntheticConfig,
};
use supnotmiwae::inference::{
    evaluate_imputation, impute_dataset, normalize, snis_predict, snis_predict_dataset, ImputationResult,
};
use supnotmiwae::model::{decayed_impute, prior_cholesky, sample_latents, sample_missing, ModelParams, ParticleNoise};
use supnotmiwae::numerics::Tensor;
use supnotmiwae::rng::{derive, Stream};
use supnotmiwae::Error;

fn dataset(n: usize, t_len: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = derive(seed, Stream::Data, &[]);
    let series = (0..n).map(|_| random_series(t_len, d, &mut rng)).collect();
    Dataset::new(series, (0..d).map(|j| format!("f{j}")).collect(), Split::Test).unwrap()
}

#[test]
fn predictions_and_weights_are_normalized() {
    let model = ModelParams::<f64>::new(small_config(3, false), 1).unwrap();
    let ds = dataset(6, 9, 3, 2);
    let preds = snis_predict_dataset(&model, &ds, 5, 3, 0.3, 4).unwrap();
    assert_eq!(preds.len(), 6);
    for p in &preds {
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.probs.iter().all(|&v| v >= 0.0));
        assert_eq!(p.weights.normalized.len(), 3);
        for w in &p.weights.normalized {
            assert_eq!(w.len(), 5);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }
    // batching does not change per-series results
    let alone = snis_predict(&model, &ds.series[0], 5, 3, 0.3, 4).unwrap();
    for (a, b) in alone.probs.iter().zip(&preds[0].probs) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn degenerate_weights_are_rejected() {
    assert!(matches!(normalize(&[f64::NEG_INFINITY; 3]), Err(Error::DegeneratePosterior)));
    let w = normalize(&[0.0, 2f64.ln()]).unwrap();
    assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
}

/// Rebuilds one particle's classifier input from the single-series entry
/// points, drawing noise the way prediction does for `(series 0, s)`.
fn manual_probs(model: &ModelParams<f64>, s: &MaskedTimeSeries, k: usize, beta: f64, seed: u64) -> Vec<Vec<f64>> {
    let c = &model.config;
    let (t_len, d) = (s.len(), c.n_features);
    let noise = ParticleNoise::<f64>::draw(
        k,
        t_len,
        c.z_dim,
        d,
        beta,
        &mut derive(seed, Stream::Particles, &[0, 0]),
        &mut derive(seed, Stream::Dropout, &[0, 0]),
    )
    .unwrap();
    let enc = model.encoder_forward(s);
    let chol = prior_cholesky(s.times(), &c.kernel).unwrap();
    let paths = sample_latents(&enc, &chol, &noise.eps_z).unwrap();
    let w = model.store.get(model.classifier.decay_w).data().to_vec();
    let b = model.store.get(model.classifier.decay_b).data().to_vec();
    let delta = compute_intervals(s.mask(), s.times(), d);
    paths
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let dec = model.decoder_forward(&p.z);
            let ex = Tensor::from_fn(t_len, d, |t, f| noise.eps_x.at(j * t_len + t, f));
            let xt = sample_missing(&dec, s, &ex).unwrap();
            let keep = &noise.drop.keep[j * t_len * d..(j + 1) * t_len * d];
            let xh = decayed_impute(s, xt.data(), keep, &delta, &w, &b);
            let lp = model.classifier_forward(&Tensor::matrix(t_len, d, xh));
            lp.row_slice(0).iter().map(|v| v.exp()).collect()
        })
        .collect()
}

#[test]
fn single_particle_collapses_to_classifier() {
    let model = ModelParams::<f64>::new(small_config(2, false), 6).unwrap();
    let ds = dataset(1, 7, 2, 3);
    let pred = snis_predict(&model, &ds.series[0], 1, 1, 0.3, 21).unwrap();
    let manual = &manual_probs(&model, &ds.series[0], 1, 0.3, 21)[0];
    for (a, b) in pred.probs.iter().zip(manual) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(pred.weights.normalized, vec![vec![1.0]]);
}

#[test]
fn equal_weights_average_particle_predictions() {
    // Encoder equal to the prior on a single step and a constant decoder
    // make every marginal weight identical.
    let mut model = ModelParams::<f64>::new(small_config(2, false), 9).unwrap();
    let names: Vec<String> = model.store.entries().iter().map(|e| e.name.clone()).collect();
    for name in names.iter().filter(|n| n.starts_with("enc.") || n.starts_with("dec.")) {
        let id = model.store.find(name).unwrap();
        model.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let raw = (1.0f64 - 1e-4).exp_m1().ln();
    let id = model.store.find("enc.head.1.bias").unwrap();
    model.store.get_mut(id).data_mut()[4..].iter_mut().for_each(|v| *v = raw);
    let id = model.store.find("dec.head.1.bias").unwrap();
    model.store.get_mut(id).data_mut().copy_from_slice(&[0.5, -0.2, 0.3, 0.3]);

    let s = MaskedTimeSeries::new("e", vec![0.0], vec![1.5, 0.0], vec![true, false], 2, Some(1)).unwrap();
    let pred = snis_predict(&model, &s, 8, 1, 0.0, 5).unwrap();
    let w = &pred.weights.normalized[0];
    for v in w {
        assert!((v - 0.125).abs() < 1e-9, "{v}");
    }
    let manual = manual_probs(&model, &s, 8, 0.0, 5);
    for c in 0..2 {
        let mean = manual.iter().map(|p| p[c]).sum::<f64>() / 8.0;
        assert!((pred.probs[c] - mean).abs() < 1e-9);
    }
    // particles genuinely differ, so this is not the trivial case
    assert!(manual.iter().any(|p| (p[0] - manual[0][0]).abs() > 1e-6));
}

#[test]
fn imputation_respects_observed_cells() {
    let model = ModelParams::<f64>::new(small_config(3, false), 2).unwrap();
    let ds = dataset(4, 6, 3, 1);
    let res = impute_dataset(&model, &ds, 7, 3).unwrap();
    for (r, s) in res.iter().zip(&ds.series) {
        assert_eq!(r.draws.len(), 7);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (i, &m) in s.mask().iter().enumerate() {
            assert!(r.std[i] >= 0.0);
            if m {
                assert_eq!(r.mean[i], s.zero_filled()[i]);
                assert_eq!(r.std[i], 0.0);
                assert!(r.draws.iter().all(|d| d[i] == s.zero_filled()[i]));
            }
        }
    }

    let full = MaskedTimeSeries::new("f", vec![0.0, 1.0], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![true; 6], 3, None).unwrap();
    let ds = Dataset::new(vec![full], vec!["a".into(), "b".into(), "c".into()], Split::Test).unwrap();
    let r = &impute_dataset(&model, &ds, 3, 0).unwrap()[0];
    assert_eq!(r.mean, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(r.std.iter().all(|&v| v == 0.0));
}

#[test]
fn single_draw_uses_decoder_mean() {
    let model = ModelParams::<f64>::new(small_config(2, false), 4).unwrap();
    let ds = dataset(1, 5, 2, 9);
    let s = &ds.series[0];
    let r = &impute_dataset(&model, &ds, 1, 8).unwrap()[0];
    assert_eq!(r.weights, vec![1.0]);
    // recover the draw's decoder output from the same noise
    let noise = ParticleNoise::<f64>::draw(
        1,
        5,
        4,
        2,
        0.0,
        &mut derive(8, Stream::Particles, &[0, u64::MAX]),
        &mut derive(8, Stream::Dropout, &[0, u64::MAX]),
    )
    .unwrap();
    let enc = model.encoder_forward(s);
    let chol = prior_cholesky(s.times(), &model.config.kernel).unwrap();
    let z = &sample_latents(&enc, &chol, &noise.eps_z).unwrap()[0].z;
    let dec = model.decoder_forward(z);
    for (i, &m) in s.mask().iter().enumerate() {
        if !m {
            assert!((r.mean[i] - dec.mu.data()[i]).abs() < 1e-9);
            assert!((r.std[i] - dec.sigma.data()[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn deterministic_decoder_gives_floor_deviation() {
    let mut model = ModelParams::<f64>::new(small_config(2, false), 4).unwrap();
    let names: Vec<String> = model.store.entries().iter().map(|e| e.name.clone()).collect();
    for name in names.iter().filter(|n| n.starts_with("dec.")) {
        let id = model.store.find(name).unwrap();
        model.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let id = model.store.find("dec.head.1.bias").unwrap();
    model.store.get_mut(id).data_mut().copy_from_slice(&[0.3, -0.7, -60.0, -60.0]);
    let ds = dataset(3, 5, 2, 4);
    for r in impute_dataset(&model, &ds, 10, 1).unwrap() {
        for (i, &o) in r.observed.iter().enumerate() {
            if !o {
                assert!((r.std[i] - 1e-4).abs() < 1e-9, "{}", r.std[i]);
                assert!((r.mean[i] - [0.3, -0.7][i % 2]).abs() < 1e-12);
            }
        }
    }
}

fn holdout(truth: &[f64]) -> HoldoutMask {
    HoldoutMask {
        hidden: vec![vec![true; truth.len()]],
        truth: vec![truth.to_vec()],
        n_features: 1,
    }
}

fn point(values: Vec<f64>) -> ImputationResult {
    let n = values.len();
    let s = MaskedTimeSeries::new("h", (0..n).map(|t| t as f64).collect(), vec![0.0; n], vec![false; n], 1, None).unwrap();
    ImputationResult::point(&s, values)
}

#[test]
fn imputation_scores_hand_examples() {
    let h = holdout(&[1.0, -1.0]);
    let s = evaluate_imputation(&[point(vec![0.5, -0.5])], &h).unwrap();
    assert!((s.mae - 0.5).abs() < 1e-12 && (s.mre - 0.5).abs() < 1e-12);
    let s = evaluate_imputation(&[point(vec![1.0, -1.0])], &h).unwrap();
    assert_eq!((s.mae, s.mre), (0.0, 0.0));
    assert!(matches!(
        evaluate_imputation(&[point(vec![1.0, 1.0])], &holdout(&[0.0, 0.0])),
        Err(Error::UndefinedMetric(_))
    ));
    let empty = HoldoutMask {
        hidden: vec![vec![false; 2]],
        truth: vec![vec![0.0; 2]],
        n_features: 1,
    };
    assert!(evaluate_imputation(&[point(vec![0.0, 0.0])], &empty).is_err());
}

#[test]
fn mean_imputation_of_standardized_data_has_unit_mre() {
    let data = generate_synthetic(&SyntheticConfig {
        n: 200,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let ds = standardize(&data.masked.clone().fit_stats().unwrap()).unwrap();
    let (visible, h) = make_holdout(&ds, 0.1, 5).unwrap();
    let stats = visible.stats.clone().unwrap();
    let results: Vec<ImputationResult> = visible.series.iter().map(|s| ImputationResult::point(s, impute_mean(s, &stats))).collect();
    let score = evaluate_imputation(&results, &h).unwrap();
    assert!((score.mre - 1.0).abs() < 0.01, "{}", score.mre);
}
