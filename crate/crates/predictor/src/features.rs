//! Per-frame feature sequences: a handcrafted extractor from simple frame
//! statistics, corpus z-scoring, and synthetic statistics for mock content.

use ladder_core::codec::MockContentParams;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{PredictorError, TagrnConfig};

/// `T×D` per-frame features of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub sequence_id: String,
    pub values: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(sequence_id: impl Into<String>, values: Array2<f64>) -> Result<Self, PredictorError> {
        if values.is_empty() {
            return Err(PredictorError::Shape(format!("empty feature matrix {:?}", values.dim())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::NonFinite("feature sequence"));
        }
        Ok(Self { sequence_id: sequence_id.into(), values })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Simple statistics of one decoded frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub mean_luma: f64,
    pub luma_variance: f64,
    /// Mean squared spatial gradient.
    pub gradient_energy: f64,
    /// Mean squared difference to the previous frame (0 for the first).
    pub temporal_difference: f64,
}

impl FrameStats {
    pub const COUNT: usize = 4;

    fn raw(&self) -> [f64; Self::COUNT] {
        [self.mean_luma, self.luma_variance, self.gradient_energy, self.temporal_difference]
    }
}

/// `T×D` features: the first `T` frames are sampled evenly from `frames`,
/// each statistic is log-compressed (`ln(1 + max(x, 0))`), and the four
/// values are tiled across `D` columns with any remainder left at zero.
pub fn handcrafted_features(
    sequence_id: &str,
    frames: &[FrameStats],
    config: &TagrnConfig,
) -> Result<FeatureSequence, PredictorError> {
    let (t, d) = (config.t_frames, config.feature_dim);
    if d < FrameStats::COUNT {
        return Err(PredictorError::Config(format!("feature_dim too small: {d} < {}", FrameStats::COUNT)));
    }
    if frames.len() < t {
        return Err(PredictorError::MissingFrames { sequence_id: sequence_id.to_string(), got: frames.len(), need: t });
    }
    let tiled = d / FrameStats::COUNT * FrameStats::COUNT;
    let mut values = Array2::zeros((t, d));
    for i in 0..t {
        let raw = frames[i * frames.len() / t].raw();
        for j in 0..tiled {
            values[[i, j]] = raw[j % FrameStats::COUNT].max(0.0).ln_1p();
        }
    }
    FeatureSequence::new(sequence_id, values)
}

/// Per-column mean and standard deviation over every frame of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit(corpus: &[FeatureSequence]) -> Result<Self, PredictorError> {
        let d = corpus.first().ok_or_else(|| PredictorError::Config("empty feature corpus".into()))?.dim();
        if corpus.iter().any(|s| s.dim() != d) {
            return Err(PredictorError::Shape("feature sequences differ in width".into()));
        }
        let n: f64 = corpus.iter().map(|s| s.frames() as f64).sum();
        let mut mean = vec![0.0; d];
        for s in corpus {
            for row in s.values.rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / n;
                }
            }
        }
        let mut var = vec![0.0; d];
        for s in corpus {
            for row in s.values.rows() {
                for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m).powi(2) / n;
                }
            }
        }
        Ok(Self { mean, std: var.into_iter().map(f64::sqrt).collect() })
    }

    /// z-scores each column; constant columns map to zero.
    pub fn apply(&self, seq: &FeatureSequence) -> Result<FeatureSequence, PredictorError> {
        if seq.dim() != self.mean.len() {
            return Err(PredictorError::Shape(format!("features are {} wide, normalizer {}", seq.dim(), self.mean.len())));
        }
        let mut values = seq.values.clone();
        for mut row in values.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        FeatureSequence::new(seq.sequence_id.clone(), values)
    }
}

/// Frame statistics consistent with mock content: motion grows with
/// complexity, spatial detail with both complexity and sharpness. Each
/// frame carries log-normal measurement noise.
pub fn mock_frame_stats(params: &MockContentParams, frames: usize, seed: u64) -> Vec<FrameStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::<f64>::new(0.0, 0.15).expect("valid sigma");
    let c = params.complexity;
    let detail = 0.5 + params.sharpness / 100.0;
    let base_luma = 60.0 + 120.0 * (seed % 1000) as f64 / 1000.0;
    (0..frames)
        .map(|i| {
            let mut jitter = || noise.sample(&mut rng).exp();
            FrameStats {
                mean_luma: base_luma * jitter(),
                luma_variance: 300.0 * detail * c.sqrt() * jitter(),
                gradient_energy: 40.0 * detail * detail * c.powf(0.75) * jitter(),
                temporal_difference: if i == 0 { 0.0 } else { 25.0 * c * jitter() },
            }
        })
        .collect()
}
