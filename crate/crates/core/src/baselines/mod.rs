//! Heuristic imputers and the GRU classifier family: GRU-zero, -mean,
//! -forward, -simple and GRU-D.

mod classifier;
mod gru;
mod impute;

pub use classifier::{
    evaluate_classifier, run_baseline_classifier, BaselineConfig, GruClassifier, SimpleImpute, Variant,
};
pub use gru::{gru_cell, DecayParams, GruLayer, GruParams};
pub(crate) use gru::decay;
pub use impute::{
    compute_intervals, decay_gamma, grud_impute, impute_forward, impute_mean, impute_zero, last_observed,
    TimeIntervals,
};
