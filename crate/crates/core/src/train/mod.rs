//! Optimizer, learning-rate schedule, metrics, the training/evaluation loops
//! and the ablation harness.

mod ablate;
mod checkpoint;
mod config;
mod metrics;
mod optim;
mod run;

use std::path::Path;

use crate::autodiff::pgrw::PgrwError;
use crate::autodiff::AdError;
use crate::blocks::NetError;
use crate::data::DataError;

pub use ablate::{ablate, ablation_csv, score_checkpoint, write_ablation_csv, AblationAxis, AblationMode, AblationRow, ABLATION_CSV_HEADER};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FILE, MODEL_CONFIG_FILE, VELOCITY_PREFIX};
pub use config::{parse_precision, precision_name, TrainConfig};
pub use metrics::{argmax, compute_metrics, compute_part_metrics, masked_argmax, shape_miou, MetricReport, ShapeResult};
pub use optim::{cosine_lr, sgd_step, Velocity};
pub use run::{evaluate, train, train_with, EpochRecord, EvalResult, TrainSummary, METRICS_CSV_HEADER, METRICS_FILE};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weights(#[from] PgrwError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite gradient for `{param}` at element {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("metrics: {0}")]
    Metrics(String),
}

impl From<AdError> for TrainError {
    fn from(e: AdError) -> Self {
        TrainError::Net(NetError::Ad(e))
    }
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
