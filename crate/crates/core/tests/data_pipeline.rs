use proptest::prelude::*;
use supnotmiwae::data::{
    generate_synthetic, make_holdout, read_csv, standardize, unstandardize, write_csv, CsvSchema, Dataset,
    Mechanism, MissingMechanismConfig, SyntheticConfig,
};
use supnotmiwae::Error;

fn synth(mechanism: Mechanism, rate: f64, n: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n,
        t_len: 24,
        d: 4,
        missing: MissingMechanismConfig {
            mechanism,
            rate,
            slope: 2.0,
            threshold: 0.0,
        },
        seed,
        ..Default::default()
    }
}

/// Mean ground truth at missing minus at observed cells, with its
/// standard error.
fn missing_minus_observed(masked: &Dataset, complete: &Dataset) -> (f64, f64) {
    let (mut miss, mut obs) = (Vec::new(), Vec::new());
    for (m, c) in masked.series.iter().zip(&complete.series) {
        for t in 0..m.len() {
            for j in 0..m.n_features() {
                let v = c.observed(t, j).unwrap();
                if m.is_observed(t, j) {
                    obs.push(v);
                } else {
                    miss.push(v);
                }
            }
        }
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    let (a, va) = stats(&miss);
    let (b, vb) = stats(&obs);
    (a - b, (va + vb).sqrt())
}

#[test]
fn mcar_rate_over_sixty_thousand_cells() {
    let cfg = SyntheticConfig {
        n: 500,
        t_len: 20,
        d: 6,
        ..synth(Mechanism::Mcar, 0.3, 500, 3)
    };
    let data = generate_synthetic(&cfg).unwrap();
    let rate = data.masked.missing_rate();
    assert!((rate - 0.3).abs() <= 0.01, "rate {rate}");
}

#[test]
fn mechanisms_separate_conditional_means() {
    let data = generate_synthetic(&synth(Mechanism::Mcar, 0.4, 600, 5)).unwrap();
    let (diff, se) = missing_minus_observed(&data.masked, &data.complete);
    assert!(diff.abs() < 4.0 * se, "MCAR diff {diff} se {se}");

    let data = generate_synthetic(&synth(Mechanism::Mnar, 0.4, 600, 5)).unwrap();
    let (diff, se) = missing_minus_observed(&data.masked, &data.complete);
    assert!(diff > 5.0 * se, "MNAR diff {diff} se {se}");

    let data = generate_synthetic(&synth(Mechanism::Mar, 0.4, 600, 5)).unwrap();
    assert!((data.masked.missing_rate() - 0.4).abs() < 0.1);
}

#[test]
fn values_do_not_depend_on_mechanism() {
    let a = generate_synthetic(&synth(Mechanism::Mcar, 0.2, 30, 9)).unwrap();
    let b = generate_synthetic(&synth(Mechanism::Mnar, 0.5, 30, 9)).unwrap();
    assert_eq!(a.complete, b.complete);
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let data = generate_synthetic(&synth(Mechanism::Mnar, 0.4, 3, 1)).unwrap();
    let mut buf = Vec::new();
    write_csv(&data.masked, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back, data.masked);
    for (a, b) in back.series.iter().zip(&data.masked.series) {
        for (x, y) in a.zero_filled().iter().zip(b.zero_filled()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let data = generate_synthetic(&synth(Mechanism::Mar, 0.3, 4, 2)).unwrap();
    supnotmiwae::data::save_csv(&data.masked, &path).unwrap();
    let back = supnotmiwae::data::load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(back, data.masked);
}

#[test]
fn holdout_count_and_subset() {
    let cfg = SyntheticConfig {
        n: 125,
        t_len: 20,
        ..synth(Mechanism::Mcar, 0.0, 125, 4)
    };
    let data = generate_synthetic(&cfg).unwrap();
    assert_eq!(data.masked.n_observed(), 10_000);
    let (hidden, mask) = make_holdout(&data.masked, 0.1, 8).unwrap();
    assert!((mask.len() as i64 - 1000).abs() <= 60);
    assert_eq!(hidden.n_observed(), 10_000 - mask.len());
    for (si, t, j, v) in mask.cells() {
        assert!(!hidden.series[si].is_observed(t, j));
        assert_eq!(data.masked.series[si].observed(t, j), Some(v));
    }
}

#[test]
fn holdout_rate_limits() {
    let data = generate_synthetic(&synth(Mechanism::Mnar, 0.3, 10, 4)).unwrap();
    let (same, mask) = make_holdout(&data.masked, 0.0, 1).unwrap();
    assert!(mask.is_empty());
    assert_eq!(same, data.masked);
    assert!(matches!(make_holdout(&data.masked, 1.0, 1), Err(Error::Contract(_))));
}

#[test]
fn standardization_round_trip() {
    let data = generate_synthetic(&synth(Mechanism::Mnar, 0.3, 20, 6)).unwrap();
    let ds = data.masked.clone().fit_stats().unwrap();
    let z = standardize(&ds).unwrap();
    let back = unstandardize(&z).unwrap();
    for (a, b) in back.series.iter().zip(&ds.series) {
        assert_eq!(a.mask(), b.mask());
        for (x, y) in a.zero_filled().iter().zip(b.zero_filled()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
    let again = standardize(&z.clone().fit_stats().unwrap()).unwrap();
    for (a, b) in again.series.iter().zip(&z.series) {
        for (x, y) in a.zero_filled().iter().zip(b.zero_filled()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn holdout_never_touches_missing_cells(seed in 0u64..1000, rate in 0.0f64..0.9, miss in 0.0f64..0.8) {
        let data = generate_synthetic(&synth(Mechanism::Mnar, miss, 6, seed)).unwrap();
        let (hidden, mask) = make_holdout(&data.masked, rate, seed).unwrap();
        for (si, s) in data.masked.series.iter().enumerate() {
            for (i, &h) in mask.hidden[si].iter().enumerate() {
                prop_assert!(!h || s.mask()[i]);
                prop_assert_eq!(hidden.series[si].mask()[i], s.mask()[i] && !h);
            }
        }
        let expected = (rate * data.masked.n_observed() as f64).round() as usize;
        prop_assert_eq!(mask.len(), expected);
    }

    #[test]
    fn generator_is_deterministic(seed in 0u64..1000, rate in 0.0f64..0.9) {
        let c = synth(Mechanism::Mar, rate, 5, seed);
        prop_assert_eq!(generate_synthetic(&c).unwrap(), generate_synthetic(&c).unwrap());
    }
}
