//! Resolution classifier for bitrate ladders: multi-head self-attention over
//! per-frame features, a stacked bi-directional GRU, and one softmax per
//! preset bitrate, trained with focal loss and hand-derived gradients.

use std::path::PathBuf;

use thiserror::Error;

pub mod attention;
pub mod config;
pub mod features;
pub mod gru;
pub mod io;
pub mod network;
pub mod params;
pub mod train;

pub use attention::{attention_forward, attention_weights};
pub use config::{FocalLossConfig, TagrnConfig, TrainConfig};
pub use features::{handcrafted_features, mock_frame_stats, FeatureNormalizer, FeatureSequence, FrameStats};
pub use gru::{gru_forward, gru_states};
pub use network::{backward, classify, focal_loss, forward, ladder_from_probs, one_hot_matrix, predict_ladder, predict_probs, Mode};
pub use params::{init_params, TagrnParams};
pub use train::{train, EpochRecord, TrainHistory};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("{sequence_id}: {got} frames, need {need}")]
    MissingFrames { sequence_id: String, got: usize, need: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ladder_core::ModelError),
}
