//! Boundary to encoders and quality tools.
//!
//! [`SubprocessCodec`] drives real tools through command templates,
//! [`MockCodec`] evaluates closed-form RD models for desk-scale runs.

mod mock;
mod subprocess;

use std::path::PathBuf;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Resolution;

pub use mock::{mock_cqp_bitrate, mock_quality, MockCodec, MockCodecConfig, MockConstants, MockContentParams, MockFault};
pub use subprocess::{CodecAdapterConfig, SubprocessCodec};

/// QP used for the upper bitrate bound probe.
pub const QP_UPPER_BOUND: u8 = 16;
/// QP used for the lower bitrate bound probe.
pub const QP_LOWER_BOUND: u8 = 48;
pub const QP_MAX: u8 = 51;

/// One entry of a sequence manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSource {
    pub sequence_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Frame count, used to turn an output size into a bitrate when no probe
    /// command is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<u64>,
}

impl SequenceSource {
    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.width, self.height)
    }
}

/// Handle to an encoded asset.
#[derive(Debug, Clone, PartialEq)]
pub enum AssetRef {
    File(PathBuf),
    Mock { sequence_id: String, resolution: Resolution, bitrate_kbps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutcome {
    pub actual_bitrate_kbps: f64,
    pub asset: AssetRef,
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("`{command}` exited with {status}: {output}")]
    CommandFailed { command: String, status: String, output: String },
    #[error("could not start `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("expected output {0} was not produced")]
    MissingOutput(PathBuf),
    #[error("cannot parse {what} from {text:?}")]
    Unparsable { what: &'static str, text: String },
    #[error("rate control failed: target {target_kbps} Kbps, actual {actual_kbps:.1} Kbps ({:.1}% off)", deviation * 100.0)]
    RateControl { target_kbps: u32, actual_kbps: f64, deviation: f64 },
    #[error("quality score {0} outside [0, 100]")]
    QualityOutOfRange(f64),
    #[error("qp {0} outside [0, 51]")]
    InvalidQp(u8),
    #[error("unknown sequence {0}")]
    UnknownSequence(String),
    #[error("template `{template}`: {message}")]
    Template { template: String, message: String },
    #[error("asset {0:?} was not produced by this codec")]
    ForeignAsset(AssetRef),
    #[error("injected fault: {0}")]
    Injected(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Bitrate deviation limits for rate-controlled encodes, as fractions of the
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTolerance {
    pub warn_fraction: f64,
    pub hard_fraction: f64,
}

impl Default for RateTolerance {
    fn default() -> Self {
        Self { warn_fraction: 0.10, hard_fraction: 0.25 }
    }
}

impl RateTolerance {
    /// Returns the relative deviation, logging a warning past the warning
    /// threshold and failing past the hard limit.
    pub fn check(&self, target_kbps: u32, actual_kbps: f64) -> Result<f64, CodecError> {
        let deviation = (actual_kbps - target_kbps as f64).abs() / target_kbps as f64;
        if !actual_kbps.is_finite() || actual_kbps <= 0.0 || deviation > self.hard_fraction {
            return Err(CodecError::RateControl { target_kbps, actual_kbps, deviation });
        }
        if deviation > self.warn_fraction {
            warn!(
                "rate deviation {:.1}% at target {} Kbps (actual {:.1} Kbps)",
                deviation * 100.0,
                target_kbps,
                actual_kbps
            );
        }
        Ok(deviation)
    }
}

/// Encoder and quality-tool operations used by the ground-truth pipeline.
pub trait Codec: Sync {
    /// Constant-QP encode at `resolution`; returns the measured bitrate.
    fn encode_cqp(&self, source: &SequenceSource, resolution: Resolution, qp: u8) -> Result<EncodeOutcome, CodecError>;

    /// Rate-controlled encode at `resolution` aiming for `target_bitrate_kbps`.
    fn encode_cbr(
        &self,
        source: &SequenceSource,
        resolution: Resolution,
        target_bitrate_kbps: u32,
    ) -> Result<EncodeOutcome, CodecError>;

    /// Quality of `distorted` after upscaling it to `upscale_to`, against the
    /// source.
    fn measure_quality(
        &self,
        source: &SequenceSource,
        distorted: &EncodeOutcome,
        upscale_to: Resolution,
    ) -> Result<f64, CodecError>;
}

/// Serialized codec configuration, selected by its `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodecConfig {
    Mock(MockCodecConfig),
    Subprocess(CodecAdapterConfig),
}

impl CodecConfig {
    pub fn build(self) -> Result<Box<dyn Codec>, CodecError> {
        Ok(match self {
            CodecConfig::Mock(cfg) => Box::new(MockCodec::new(cfg)),
            CodecConfig::Subprocess(cfg) => Box::new(SubprocessCodec::new(cfg)?),
        })
    }
}
