//! Deep generative classification of multivariate time series with
//! missing-not-at-random (MNAR) values.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors, a reverse-mode gradient tape, stable
//!   densities, causal attention / convolution and AdamW.
//! * [`data`]: masked series containers, standardization, CSV I/O,
//!   synthetic MCAR/MAR/MNAR generation and hold-out masking.
//! * [`baselines`]: heuristic imputers and the GRU classifier family
//!   (zero / mean / forward / simple / GRU-D).
//! * [`model`]: GP prior, causal-transformer encoder and decoder, the
//!   Bernoulli missingness model, decayed imputation and the classifier.
//! * [`objective`]: importance weights, the IWAE bound, ablations,
//!   training and gradient checking.
//! * [`inference`]: self-normalized importance sampling prediction and
//!   probabilistic imputation.
//! * [`metrics`]: AUROC, CE, ECE, Brier, accuracy/precision/recall.
//!
//! All model math is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common instantiations.

pub mod baselines;
pub mod data;
mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod rng;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// 64-bit tensor, used by tests and gradient checks.
pub type Tensor64 = numerics::Tensor<f64>;
/// 32-bit tensor, allowed for training.
pub type Tensor32 = numerics::Tensor<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type SupnotMiwae64 = objective::SupnotMiwae<f64>;
pub type SupnotMiwae32 = objective::SupnotMiwae<f32>;
pub type Graph64 = numerics::Graph<f64>;
