//! Closed-form RD model standing in for a real encoder and quality tool.
//!
//! Quality saturates with bitrate at a per-resolution ceiling that drops with
//! content sharpness, while rate demand grows with pixel count and content
//! complexity, so curves of different resolutions cross.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AssetRef, Codec, CodecError, EncodeOutcome, RateTolerance, SequenceSource, QP_MAX};
use crate::model::Resolution;
use crate::seed::derive_seed;

/// Synthetic content description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockContentParams {
    /// Rate demand multiplier `c > 0`.
    pub complexity: f64,
    /// Rescaling-loss weight `s ∈ [0, 100]`.
    pub sharpness: f64,
    /// Scale of the quality noise (VMAF points) and of the rate-control jitter.
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MockContentParams {
    pub fn new(complexity: f64, sharpness: f64) -> Self {
        Self { complexity, sharpness, noise_scale: 0.0, seed: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.complexity.is_finite()
            && self.complexity > 0.0
            && (0.0..=100.0).contains(&self.sharpness)
            && self.noise_scale.is_finite()
            && self.noise_scale >= 0.0
    }
}

/// Global constants of the mock model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockConstants {
    /// Saturation rate per megapixel, Kbps.
    pub kappa: f64,
    /// CQP rate per megapixel at QP 36, Kbps.
    pub beta: f64,
    /// Relative rate-control jitter per unit of `noise_scale`.
    pub rate_jitter: f64,
}

impl Default for MockConstants {
    fn default() -> Self {
        Self { kappa: 800.0, beta: 1500.0, rate_jitter: 0.05 }
    }
}

const NOISE_QUALITY: u64 = 1;
const NOISE_RATE: u64 = 2;

fn gaussian(seed: u64, parts: &[u64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, parts));
    StandardNormal.sample(&mut rng)
}

/// `q(r, b) = Qcap(r)·(1 − exp(−b / (c·a(r)))) + ε`, clamped to `[0, 100]`,
/// with `Qcap(r) = 100 − s·(1 − h/1080)` and `a(r) = κ·pixels/10⁶`.
pub fn mock_quality(
    params: &MockContentParams,
    constants: &MockConstants,
    resolution: Resolution,
    bitrate_kbps: f64,
) -> f64 {
    let cap = 100.0 - params.sharpness * (1.0 - resolution.height as f64 / 1080.0);
    let saturation = constants.kappa * resolution.pixels() as f64 / 1e6;
    let mut q = cap * (1.0 - (-bitrate_kbps / (params.complexity * saturation)).exp());
    if params.noise_scale > 0.0 {
        let g = gaussian(
            params.seed,
            &[NOISE_QUALITY, resolution.width as u64, resolution.height as u64, bitrate_kbps.to_bits()],
        );
        q += params.noise_scale * g;
    }
    q.clamp(0.0, 100.0)
}

/// `b = β·c·pixels/10⁶ · 2^((36 − qp)/6)`.
pub fn mock_cqp_bitrate(params: &MockContentParams, constants: &MockConstants, resolution: Resolution, qp: u8) -> f64 {
    constants.beta * params.complexity * resolution.megapixels() * ((36.0 - qp as f64) / 6.0).exp2()
}

/// Forces a failure: the CQP probes at `resolution` when `target_bitrate_kbps`
/// is absent, the CBR encode at that bitrate otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFault {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bitrate_kbps: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockCodecConfig {
    #[serde(default)]
    pub constants: MockConstants,
    #[serde(default)]
    pub rate_tolerance: RateTolerance,
    pub sequences: BTreeMap<String, MockContentParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<MockFault>,
}

#[derive(Debug, Clone)]
pub struct MockCodec {
    config: MockCodecConfig,
}

impl MockCodec {
    pub fn new(config: MockCodecConfig) -> Self {
        Self { config }
    }

    /// Single-sequence codec with default constants.
    pub fn single(sequence_id: &str, params: MockContentParams) -> Self {
        let mut config = MockCodecConfig::default();
        config.sequences.insert(sequence_id.to_string(), params);
        Self { config }
    }

    pub fn with_fault(mut self, fault: MockFault) -> Self {
        self.config.faults.push(fault);
        self
    }

    pub fn config(&self) -> &MockCodecConfig {
        &self.config
    }

    fn params(&self, sequence_id: &str) -> Result<&MockContentParams, CodecError> {
        self.config
            .sequences
            .get(sequence_id)
            .ok_or_else(|| CodecError::UnknownSequence(sequence_id.to_string()))
    }

    fn check_fault(&self, sequence_id: &str, resolution: Resolution, target: Option<u32>) -> Result<(), CodecError> {
        let hit = self.config.faults.iter().any(|f| {
            f.sequence_id.as_deref().is_none_or(|s| s == sequence_id)
                && f.width == resolution.width
                && f.height == resolution.height
                && f.target_bitrate_kbps == target
        });
        if hit {
            let what = match target {
                Some(b) => format!("{sequence_id} {resolution} at {b} Kbps"),
                None => format!("{sequence_id} {resolution} CQP probe"),
            };
            return Err(CodecError::Injected(what));
        }
        Ok(())
    }
}

impl Codec for MockCodec {
    fn encode_cqp(&self, source: &SequenceSource, resolution: Resolution, qp: u8) -> Result<EncodeOutcome, CodecError> {
        if qp > QP_MAX {
            return Err(CodecError::InvalidQp(qp));
        }
        let params = self.params(&source.sequence_id)?;
        self.check_fault(&source.sequence_id, resolution, None)?;
        let rate = mock_cqp_bitrate(params, &self.config.constants, resolution, qp);
        Ok(EncodeOutcome {
            actual_bitrate_kbps: rate,
            asset: AssetRef::Mock { sequence_id: source.sequence_id.clone(), resolution, bitrate_kbps: rate },
        })
    }

    fn encode_cbr(
        &self,
        source: &SequenceSource,
        resolution: Resolution,
        target_bitrate_kbps: u32,
    ) -> Result<EncodeOutcome, CodecError> {
        let params = self.params(&source.sequence_id)?;
        self.check_fault(&source.sequence_id, resolution, Some(target_bitrate_kbps))?;
        let target = target_bitrate_kbps as f64;
        let actual = if params.noise_scale > 0.0 {
            let g = gaussian(
                params.seed,
                &[NOISE_RATE, resolution.width as u64, resolution.height as u64, target_bitrate_kbps as u64],
            );
            (target * (1.0 + self.config.constants.rate_jitter * params.noise_scale * g)).max(1e-3 * target)
        } else {
            target
        };
        self.config.rate_tolerance.check(target_bitrate_kbps, actual)?;
        Ok(EncodeOutcome {
            actual_bitrate_kbps: actual,
            asset: AssetRef::Mock { sequence_id: source.sequence_id.clone(), resolution, bitrate_kbps: actual },
        })
    }

    fn measure_quality(
        &self,
        source: &SequenceSource,
        distorted: &EncodeOutcome,
        _upscale_to: Resolution,
    ) -> Result<f64, CodecError> {
        match &distorted.asset {
            AssetRef::Mock { sequence_id, resolution, bitrate_kbps } if *sequence_id == source.sequence_id => {
                let params = self.params(sequence_id)?;
                Ok(mock_quality(params, &self.config.constants, *resolution, *bitrate_kbps))
            }
            other => Err(CodecError::ForeignAsset(other.clone())),
        }
    }
}
