//! Importance weights, the IWAE bound, ablations and training.

mod generative;
mod gradcheck;
mod trainer;
mod weights;

pub use generative::SupnotMiwae;
pub use gradcheck::{
    gradient_check, relative_error, tiny_instance, GradCheckReport, GroupCheck, GRADCHECK_FLOOR, GRADCHECK_STEP,
};
pub use trainer::{epoch_order, fit, validation_metric, BatchCtx, EpochRecord, TrainConfig, TrainState, Trainable};
pub use weights::{iwae_bound, log_importance_weights, LogWeights, SamplingConfig};

use serde::{Deserialize, Serialize};

/// Terms removed from the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub supervision: bool,
    pub mnar: bool,
    pub obs_dropout: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            supervision: true,
            mnar: true,
            obs_dropout: true,
        }
    }
}
