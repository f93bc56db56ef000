//! Dataset ingestion, the training loop, evaluation metrics, and the
//! synthetic labeling oracle that stands in for a farm of trained CNNs.

mod dataset;
mod metrics;
mod oracle;
mod train;

pub use dataset::{
    label_dataset, parse_sample, read_dataset, write_dataset, Sample, TrainerMeta,
};
pub use metrics::{evaluate, kendall_tau, mse, r_squared, MetricError, Metrics};
pub use oracle::oracle_accuracy;
pub use train::{export_features, train, EpochStats, TrainConfig, TrainHistory};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid sample: {0}")]
    BadSample(String),
    #[error("epoch index {0} out of range 1..={1}")]
    EpochOutOfRange(u32, u32),
    #[error("training needs at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Numeric(#[from] crate::neuralcore::NcError),
    #[error(transparent)]
    Predict(#[from] crate::predictor::PredictError),
    #[error(transparent)]
    Code(#[from] crate::layercode::CodeError),
}
