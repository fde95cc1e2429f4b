#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use supnotmiwae::data::MaskedTimeSeries;
use supnotmiwae::model::{KernelConfig, ModelConfig, ModelParams};
use supnotmiwae::numerics::Tensor;
use supnotmiwae::rng::{derive, Stream};

pub fn small_config(d: usize, online: bool) -> ModelConfig {
    ModelConfig {
        n_features: d,
        n_classes: 2,
        z_dim: 4,
        hidden: 8,
        heads: 2,
        enc_layers: 2,
        dec_layers: 2,
        cls_layers: 1,
        conv_width: 3,
        conv_channels: 4,
        mis_hidden: 4,
        kernel: KernelConfig::default(),
        online,
    }
}

pub fn random_series<R: Rng>(t_len: usize, d: usize, rng: &mut R) -> MaskedTimeSeries {
    let times = (0..t_len).map(|t| t as f64 / t_len as f64).collect();
    let values = (0..t_len * d).map(|_| StandardNormal.sample(rng)).collect();
    let mask = (0..t_len * d).map(|_| rng.random::<f64>() < 0.7).collect();
    MaskedTimeSeries::new("r", times, values, mask, d, Some(rng.random_range(0..2))).unwrap()
}

fn same_prefix(a: &Tensor<f64>, b: &Tensor<f64>, t: usize) -> bool {
    (0..=t).all(|r| a.row_slice(r).iter().zip(b.row_slice(r)).all(|(x, y)| x.to_bits() == y.to_bits()))
}

fn differs_after(a: &Tensor<f64>, b: &Tensor<f64>, t: usize) -> bool {
    (t + 1..a.rows()).any(|r| a.row_slice(r) != b.row_slice(r))
}

/// Perturbs every input strictly after a random cut `t` and checks that
/// encoder, decoder and online classifier outputs up to `t` are
/// bit-identical. Returns false on the first violation.
pub fn causality_instance(seed: u64) -> bool {
    let mut rng = derive(seed, Stream::Data, &[]);
    let t_len = rng.random_range(3..12);
    let d = rng.random_range(1..4);
    let model = ModelParams::<f64>::new(small_config(d, true), seed).unwrap();
    let cut = rng.random_range(0..t_len - 1);
    let a = random_series(t_len, d, &mut rng);
    let tail = random_series(t_len, d, &mut rng);
    let b = a.with_hidden(|_, _| false);
    let values: Vec<f64> = (0..t_len * d)
        .map(|i| if i / d > cut { tail.zero_filled()[i] + 1.0 } else { a.zero_filled()[i] })
        .collect();
    let mask: Vec<bool> = (0..t_len * d).map(|i| if i / d > cut { !a.mask()[i] } else { a.mask()[i] }).collect();
    let b = MaskedTimeSeries::new("p", b.times().to_vec(), values, mask, d, a.label).unwrap();

    let ea = model.encoder_forward(&a);
    let eb = model.encoder_forward(&b);
    if !same_prefix(&ea.mu, &eb.mu, cut) || !same_prefix(&ea.sigma, &eb.sigma, cut) {
        return false;
    }
    let za = Tensor::from_fn(t_len, 4, |_, _| StandardNormal.sample(&mut rng));
    let zb = Tensor::from_fn(t_len, 4, |t, j| if t > cut { za.at(t, j) - 2.0 } else { za.at(t, j) });
    let (da, db) = (model.decoder_forward(&za), model.decoder_forward(&zb));
    if !same_prefix(&da.mu, &db.mu, cut) || !same_prefix(&da.sigma, &db.sigma, cut) || !differs_after(&da.mu, &db.mu, cut) {
        return false;
    }
    let xa = Tensor::from_fn(t_len, d, |_, _| StandardNormal.sample(&mut rng));
    let xb = Tensor::from_fn(t_len, d, |t, j| if t > cut { -3.0 * xa.at(t, j) + 1.0 } else { xa.at(t, j) });
    let (ca, cb) = (model.classifier_forward(&xa), model.classifier_forward(&xb));
    same_prefix(&ca, &cb, cut) && differs_after(&ca, &cb, cut) && differs_after(&ea.mu, &eb.mu, cut)
}
