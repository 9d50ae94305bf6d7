//! Minimal differentiable-network kernel on 64-bit row-major matrices.

pub mod dist;
pub mod gradcheck;
pub mod layers;
mod params;

use thiserror::Error;

pub use dist::{masked_softmax, softmax_sample_eps, SampleMode};
pub use layers::{affinity, gcn_layer, Activation, Dense, GcnLayer, LstmCell, Mlp2};
pub use params::{Checkpoint, Grads, NamedParam, ParamId, ParamStore, CHECKPOINT_FORMAT};

/// Row-major `f64` matrix.
pub type Tensor2 = ndarray::Array2<f64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("no unmasked entries to choose from")]
    EmptySupport,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub fn check_finite(t: &Tensor2, what: &str) -> Result<(), NnetError> {
    if t.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnetError::NonFinite(what.to_string()))
    }
}
