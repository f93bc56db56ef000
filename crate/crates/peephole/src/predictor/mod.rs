//! The performance-prediction model f(x, t): layer embedding, LSTM
//! aggregation into a structural feature, epoch embedding, and an MLP
//! regression head squashed to (0, 1).

mod checkpoint;
mod model;

pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointError, FORMAT_VERSION,
};
pub use model::{
    backward_batch, embed_layer, forward_batch, full_grad_check, init_params, predict,
    structural_feature, BatchCache, PeepholeGrads, PeepholeHyper, PeepholeParams, PredictError,
};
