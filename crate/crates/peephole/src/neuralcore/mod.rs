//! Minimal differentiable numeric core.
//!
//! Dense affine maps, batch normalization, an LSTM step, the smooth-L1
//! loss, SGD with momentum, and finite-difference gradient verification.
//! Everything is 64-bit and has an explicit backward rule; there is no
//! general graph engine.

mod batchnorm;
mod gradcheck;
mod lstm;
mod ops;
mod optim;
mod tensor;

pub use batchnorm::{
    batchnorm, bn_backward, bn_forward, update_running, BnCache, BnMode, BnParams, BN_EPS,
    BN_MOMENTUM,
};
pub use gradcheck::grad_check;
pub use lstm::{
    lstm_backward, lstm_forward, lstm_step, lstm_step_cached, LstmCache, LstmGrads, LstmParams,
    LstmStepCache,
};
pub use ops::{
    affine, affine_backward, logistic, relu, relu_backward, smooth_l1, smooth_l1_grad,
};
pub use optim::{sgd_step, OptState, SgdHyper};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NcError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("batch normalization in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("gradient check: {0}")]
    GradCheck(String),
}
