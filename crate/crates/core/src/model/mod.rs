//! The generative classifier: GP prior over latent paths, causal
//! transformer encoder and decoder, Bernoulli missingness model,
//! decayed imputation with ObsDropout, and the classifier.

mod network;
mod ops;
mod particles;
mod prior;

pub use network::{Classifier, Decoder, Encoder, MissingModel, ModelConfig, ModelParams, SIGMA_FLOOR};
pub use ops::{
    group_by_grid, observed_loglik, sample_latents, sample_missing, DecoderOutput, EncoderOutput, LatentPath,
    PriorCache,
};
pub(crate) use particles::check_finite;
pub use particles::{decayed_impute, obsdropout_mask, DropMask, ForwardParts, ParticleNoise, ParticleVars};
pub use prior::{build_gram, gp_prior_logpdf, prior_cholesky, KernelConfig};
