use proptest::prelude::*;
use supnotmiwae::baselines::{
    compute_intervals, gru_cell, impute_forward, impute_mean, impute_zero, run_baseline_classifier, BaselineConfig,
    GruClassifier, GruLayer, Variant,
};
use supnotmiwae::data::{
    generate_synthetic, standardize, FeatureStats, MaskedTimeSeries, Mechanism, MissingMechanismConfig,
    SyntheticConfig,
};
use supnotmiwae::numerics::{Graph, ParamGroup, ParamStore, Tensor};
use supnotmiwae::objective::{TrainConfig, Trainable};
use supnotmiwae::rng::{derive, Stream};
use supnotmiwae::Error;

fn column(values: &[Option<f64>]) -> MaskedTimeSeries {
    let times = (0..values.len()).map(|t| t as f64).collect();
    let mask = values.iter().map(Option::is_some).collect();
    let vals = values.iter().map(|v| v.unwrap_or(0.0)).collect();
    MaskedTimeSeries::new("c", times, vals, mask, 1, None).unwrap()
}

#[test]
fn imputer_examples() {
    let stats = FeatureStats {
        mean: vec![1.0],
        std: vec![1.0],
    };
    assert_eq!(impute_forward(&column(&[Some(5.0), None, None]), &stats), vec![5.0, 5.0, 5.0]);
    assert_eq!(impute_mean(&column(&[None, Some(3.0), None]), &stats), vec![1.0, 3.0, 1.0]);
    assert_eq!(impute_forward(&column(&[None, Some(3.0), None]), &stats), vec![1.0, 3.0, 3.0]);
    let full = column(&[Some(2.0), Some(-1.0)]);
    for v in [impute_zero(&full), impute_mean(&full, &stats), impute_forward(&full, &stats)] {
        assert_eq!(v, vec![2.0, -1.0]);
    }
}

#[test]
fn unit_spacing_all_observed_intervals() {
    let times: Vec<f64> = (0..5).map(|t| t as f64).collect();
    let iv = compute_intervals(&[true; 10], &times, 2);
    assert_eq!(&iv.delta[..2], &[0.0, 0.0]);
    assert!(iv.delta[2..].iter().all(|&v| v == 1.0));
}

#[test]
fn tape_gru_step_matches_plain_cell() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = derive(3, Stream::Init, &[]);
    let layer = GruLayer::new(&mut store, "gru", ParamGroup::Classifier, 3, 4, &mut rng);
    let bias = store.find("gru.bias").unwrap();
    *store.get_mut(bias) = Tensor::from_fn(1, 12, |_, c| 0.1 * c as f64 - 0.5);
    let x = [0.3, -1.2, 0.8];
    let h = [0.5, -0.25, 0.1, 0.9];
    let expected = gru_cell(&x, &h, &layer.params(&store));
    let mut g = Graph::new();
    let xv = g.constant(Tensor::row(x.to_vec()));
    let hv = g.constant(Tensor::row(h.to_vec()));
    let xw = layer.project(&mut g, &store, xv);
    let out = layer.step(&mut g, &store, xw, hv);
    for (a, b) in g.value(out).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn unknown_variant_is_an_error() {
    assert!(matches!("lstm".parse::<Variant>(), Err(Error::UnknownVariant(_))));
    assert_eq!("gru-d".parse::<Variant>().unwrap(), Variant::Grud);
    assert_eq!("simple".parse::<Variant>().unwrap(), Variant::Simple);
}

#[test]
fn input_widths() {
    let stats = FeatureStats {
        mean: vec![0.0; 4],
        std: vec![1.0; 4],
    };
    let width = |variant| {
        let cfg = BaselineConfig {
            variant,
            hidden: 8,
            ..Default::default()
        };
        GruClassifier::<f64>::new(cfg, 4, 2, stats.clone(), 0).input_width()
    };
    assert_eq!(width(Variant::Zero), 4);
    assert_eq!(width(Variant::Simple), 12);
    assert_eq!(width(Variant::Grud), 8);
}

fn small_data(seed: u64) -> [supnotmiwae::data::Dataset; 3] {
    let cfg = SyntheticConfig {
        n: 300,
        t_len: 16,
        d: 4,
        missing: MissingMechanismConfig {
            mechanism: Mechanism::Mnar,
            rate: 0.4,
            ..Default::default()
        },
        class_offset: 1.0,
        seed,
        ..Default::default()
    };
    let [train, val, test] = generate_synthetic(&cfg).unwrap().split(0.2, 0.2, seed).unwrap();
    let stats = FeatureStats::fit(&train.masked).unwrap();
    let prep = |d: &supnotmiwae::data::Dataset| standardize(&d.clone().with_stats(stats.clone())).unwrap();
    [prep(&train.masked), prep(&val.masked), prep(&test.masked)]
}

#[test]
fn grud_zero_decay_is_forward_fill_mixing() {
    let [train, _, _] = small_data(1);
    let cfg = BaselineConfig {
        variant: Variant::Grud,
        hidden: 8,
        ..Default::default()
    };
    let mut grud = GruClassifier::<f64>::new(cfg, 4, 2, train.stats.clone().unwrap(), 5);
    for name in ["grud.decay.w_x", "grud.decay.b_x", "grud.decay.w_h", "grud.decay.b_h"] {
        let id = grud.store.find(name).unwrap();
        let shape = grud.store.get(id).shape().to_vec();
        *grud.store.get_mut(id) = Tensor::zeros(shape[0], shape[1]);
    }
    // With γ ≡ 1 GRU-D sees forward-filled values plus the mask; compare
    // against GRU-simple (forward) whose δ weights are zeroed.
    let simple_cfg = BaselineConfig {
        variant: Variant::Simple,
        hidden: 8,
        ..Default::default()
    };
    let mut simple = GruClassifier::<f64>::new(simple_cfg, 4, 2, train.stats.clone().unwrap(), 5);
    for (name, src) in [("gru.u_ar", "gru.u_ar"), ("gru.u_c", "gru.u_c"), ("gru.bias", "gru.bias"), ("head.weight", "head.weight"), ("head.bias", "head.bias")] {
        let v = grud.store.get(grud.store.find(src).unwrap()).clone();
        let id = simple.store.find(name).unwrap();
        *simple.store.get_mut(id) = v;
    }
    let wx = grud.store.get(grud.store.find("gru.w_x").unwrap()).clone();
    let id = simple.store.find("gru.w_x").unwrap();
    *simple.store.get_mut(id) = Tensor::from_fn(12, wx.cols(), |r, c| if r < 8 { wx.at(r, c) } else { 0.0 });
    let a = grud.predict_proba(&train, 0).unwrap();
    let b = simple.predict_proba(&train, 0).unwrap();
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn baselines_train_and_beat_chance() {
    let [train, val, test] = small_data(2);
    let tc = TrainConfig {
        batch_size: 32,
        lr: 5e-3,
        max_epochs: 8,
        patience: 8,
        seed: 2,
        ..Default::default()
    };
    for variant in [Variant::Mean, Variant::Grud] {
        let cfg = BaselineConfig {
            variant,
            hidden: 16,
            ..Default::default()
        };
        let (_, report) = run_baseline_classifier::<f64>(&cfg, &train, &val, &test, &tc).unwrap();
        let auroc = report.auroc.unwrap();
        assert!(auroc > 0.5, "{variant:?}: {auroc}");
    }
}

fn series_strategy() -> impl Strategy<Value = MaskedTimeSeries> {
    (1usize..8, 1usize..4).prop_flat_map(|(t, d)| {
        (
            prop::collection::vec(-5.0f64..5.0, t * d),
            prop::collection::vec(any::<bool>(), t * d),
            prop::collection::vec(0.01f64..1.0, t),
        )
            .prop_map(move |(v, m, gaps)| {
                let times = gaps.iter().scan(0.0, |acc, g| {
                    let now = *acc;
                    *acc += g;
                    Some(now)
                });
                MaskedTimeSeries::new("p", times.collect(), v, m, d, None).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn imputers_keep_observed_cells(s in series_strategy()) {
        let d = s.n_features();
        let stats = FeatureStats { mean: vec![0.7; d], std: vec![1.0; d] };
        for v in [impute_zero(&s), impute_mean(&s, &stats), impute_forward(&s, &stats)] {
            for (i, &m) in s.mask().iter().enumerate() {
                if m {
                    prop_assert_eq!(v[i].to_bits(), s.zero_filled()[i].to_bits());
                }
            }
        }
        let once = impute_forward(&s, &stats);
        let filled = MaskedTimeSeries::new("f", s.times().to_vec(), once.clone(), vec![true; once.len()], d, None).unwrap();
        prop_assert_eq!(impute_forward(&filled, &stats), once);
    }

    #[test]
    fn intervals_depend_only_on_mask_and_times(s in series_strategy()) {
        let d = s.n_features();
        let iv = compute_intervals(s.mask(), s.times(), d);
        prop_assert!(iv.delta.iter().all(|&x| x >= 0.0));
        prop_assert!(iv.delta[..d].iter().all(|&x| x == 0.0));
        let other = s.clone().with_hidden(|_, _| false);
        prop_assert_eq!(compute_intervals(other.mask(), other.times(), d), iv);
    }
}
