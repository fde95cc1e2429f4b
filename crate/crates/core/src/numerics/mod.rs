//! Differentiable compute core.

pub mod density;
mod graph;
pub(crate) mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
mod tensor;

pub use density::{bernoulli_logpmf, clamp_prob, gaussian_diag_logpdf, logsumexp, mvn_logpdf_chol, Cholesky};
pub use graph::{Gradients, Graph, Var};
pub use nn::{causal_attention, conv1d_time, FilterBank};
pub use optim::{AdamWConfig, AdamWState};
pub use params::{ParamGroup, ParamId, ParamStore};
pub use tensor::{matmul, matmul_at, matmul_bt, Tensor};
