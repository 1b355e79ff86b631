//! The dual-stream model. Segment projections feed two graph streams whose
//! outputs are weighted per instance and pooled for classification.

pub mod checkpoint;
mod config;
mod forward;
mod params;


use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::features::FeatureError;
use crate::segment::SegmentError;

pub use config::{Ablation, GnnKind, ModelConfig, ProjectionKind};
pub use forward::{
    aggregate, attention_coefficients, classify, forward, forward_on_tape, gnn_forward, input_blocks, instance_features,
    instance_weights, linear, lstm, node_importance, pool_instance, project_segments, read_output, tanh_mlp,
    ForwardOutput, ForwardVars,
};
pub use params::{ModelParams, ParamVars, LSTM_GATES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("video has {found} segments, model expects {expected}")]
    SegmentCount { expected: usize, found: usize },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
